"""Command line interface: ``eulerarnold <command> [model] [options]``.

Commands
--------
check       validate a model (Jacobi identity, unimodularity, tensors, measure divergence)
simulate    integrate the geodesic or dissipative flow, CSV ``t,v0,...,E``
ensemble    Langevin sampling, CSV ``sample_index,v0,...,E`` and a statistics block
fpk         Fokker-Planck-Kramers grid solver, CSV ``v0,...,P,muP`` and a report block
instanton   shooting for minimum-action paths, CSV ``t,v...,w...,H,partial_action``
curvature   principal sectional curvatures and the cylinder stability test

Every option can also be given in a YAML file passed with ``--config``. Top
level keys are the shared options (``model``, ``seed``, ``threads``, ``out``,
``G``, ``Gamma``, ``gamma``, ``D``, ``beta``); command options live in a block
named after the command. Dashes and underscores in keys are interchangeable,
unknown keys are rejected, and command-line flags win over the file.

Data files start with ``#`` metadata lines (command, model, parameters, seed,
package version) and print numbers with 17 significant digits. Summary blocks
are ``key=value`` lines: appended to the CSV behind ``# `` when the CSV goes to
standard output, printed on standard output otherwise.

Exit status is 0 on success, 2 for invalid input and 3 for runtime failures
(blow-up, non-convergence, mass drift); failures print one JSON line on
standard error.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .algebra import (InvariantMeasure, ModelSpec, energy, is_unimodular, jacobi_residual,
                      measure_divergence_residual, unimodularity_trace)
from .dynamics import coin_stability, coin_threshold, integrate, sectional_curvature
from .errors import ConfigError, EulerArnoldError, RuntimeFailure
from .fpk import (DensityField, Grid, check_grid, fpk_evolve, gaussian_field, maxwell_boltzmann,
                  solve_stationary, stationary_distance_report, uniform_field)
from .instanton import PhasePoint, integrate_instanton, relaxation_guess, shoot
from .langevin import einstein_check, sample_equilibrium
from .models import resolve_model

UINT64_MAX = 2 ** 64 - 1
COMMANDS = ("check", "simulate", "ensemble", "fpk", "instanton", "curvature")
CONFIG_BLOCK_ALIASES = {"integration": "simulate"}
COMMAND_HELP = {
    "check": "validate a model",
    "simulate": "integrate the geodesic or dissipative flow",
    "ensemble": "Langevin sampling of the equilibrium",
    "fpk": "Fokker-Planck-Kramers grid solver",
    "instanton": "minimum-action paths by shooting",
    "curvature": "sectional curvatures and cylinder stability",
}


# -- value conversion (accepts command-line strings and parsed YAML alike) --

def _floats(value):
    if isinstance(value, str):
        parts = [p for p in value.replace(";", ",").split(",") if p.strip()]
        try:
            return [float(p) for p in parts]
        except ValueError:
            raise ConfigError(f"expected comma-separated numbers, got {value!r}") from None
    try:
        return [float(x) for x in np.ravel(np.asarray(value, dtype=float))]
    except (TypeError, ValueError):
        raise ConfigError(f"expected numbers, got {value!r}") from None


def vector(value):
    return np.array(_floats(value))


def tensor(value):
    """Scalar, diagonal or row-major flat matrix (interpreted by the model)."""
    values = _floats(value)
    return values[0] if len(values) == 1 else values


def vector_list(value):
    """``"a,b;c,d"`` or a list of lists."""
    if isinstance(value, str):
        return [vector(part) for part in value.split(";") if part.strip()]
    return [vector(item) for item in value]


def number(value):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}") from None
    return out


def positive(value):
    out = number(value)
    if not out > 0:
        raise ConfigError(f"expected a positive number, got {value!r}")
    return out


def count(value):
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer, got {value!r}") from None
    if out != float(value) or out < 1:
        raise ConfigError(f"expected a positive integer, got {value!r}")
    return out


def seed(value):
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {value!r}") from None
    if not 0 <= out <= UINT64_MAX:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {value!r}")
    return out


def flag(value):
    if isinstance(value, bool):
        return value
    raise ConfigError(f"expected true or false, got {value!r}")


def text(value):
    return str(value)


def choice(*options):
    def convert(value):
        if value not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {value!r}")
        return value
    return convert


def key_values(value):
    """``"r=1,h=1,m=1"`` or a mapping, to a dict of floats."""
    if isinstance(value, dict):
        return {str(k): number(v) for k, v in value.items()}
    out = {}
    for part in str(value).split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value pairs, got {value!r}")
        out[key.strip()] = number(val)
    return out


# -- option tables: (flag, convert, default, help); default None means optional --

MODEL_OPTIONS = [
    ("--G", tensor, None, "kinetic metric: scalar, diagonal or row-major matrix"),
    ("--Gamma", tensor, None, "dissipation tensor: scalar, diagonal or row-major matrix"),
    ("--gamma", number, None, "isotropic dissipation, Gamma = gamma * I"),
    ("--D", tensor, None, "noise covariance: scalar, diagonal or row-major matrix"),
    ("--beta", positive, None, "inverse temperature; sets D = Gamma / beta unless D is given"),
]

SHARED_OPTIONS = [
    ("--out", text, "-", "output file ('-' for standard output)"),
    ("--threads", count, 1, "worker threads (never changes results)"),
]

COMMAND_OPTIONS = {
    "check": [
        ("--at", vector, None, "state at which to probe the divergence of mu times the geodesic drift"),
        ("--h", positive, 1e-4, "central-difference step for --at"),
    ],
    "simulate": [
        ("--v0", vector, None, "initial state, comma separated"),
        ("--T", positive, 1.0, "final time"),
        ("--dt", positive, 1e-3, "time step"),
        ("--dissipative", flag, False, "include the dissipation term"),
    ],
    "ensemble": [
        ("--v0", vector, None, "initial state (default: origin)"),
        ("--dt", positive, 1e-3, "time step"),
        ("--burn-in", number, 5.0, "discarded time per chain"),
        ("--samples", count, 10000, "retained samples (split over chains)"),
        ("--thin", count, 10, "steps between retained samples"),
        ("--chains", count, 1, "independent chains"),
        ("--seed", seed, 0, "master seed (unsigned 64-bit)"),
        ("--allow-naive", flag, False, "sample models with a non-constant measure anyway"),
        ("--no-samples", flag, False, "write only the statistics block"),
    ],
    "fpk": [
        ("--grid", text, None, "grid 'lo:hi:cells,...' (one entry per coordinate)"),
        ("--eps", positive, None, "lower edge of the v1 axis (half-plane cut-off)"),
        ("--T", number, None, "evolution time (omit with --stationary)"),
        ("--dt", positive, None, "time step (default: the stability bound)"),
        ("--stationary", flag, False, "run until the L1 change per unit time is below 1e-8"),
        ("--max-steps", count, 2_000_000, "step budget"),
        ("--drift", choice("auto", "full", "linear"), "auto",
         "drift in the flux: full, linear (dissipation only) or auto (linear for the half-plane)"),
        ("--init", choice("uniform", "maxwell", "gaussian"), "uniform", "initial field"),
        ("--center", vector, None, "centre of the gaussian initial field"),
        ("--width", positive, 0.5, "width of the gaussian initial field"),
        ("--restart", text, None, "continue from a CSV written by this command"),
        ("--report", flag, False, "half-plane: stationary distance report against the closed form"),
        ("--eps-values", vector, None, "report: extra v1 cut-offs for the sensitivity study"),
        ("--archive", text, None, "report: where to archive a closed-form discrepancy (JSON)"),
        ("--no-control", flag, False, "report: skip the constant-measure control run"),
    ],
    "instanton": [
        ("--v-start", vector, None, "start state"),
        ("--v-end", vector, None, "end state"),
        ("--T", positive, 10.0, "path duration"),
        ("--dt", positive, 1e-3, "time step"),
        ("--w-guess", vector, None, "first initial-momentum guess (default: zero)"),
        ("--guesses", vector_list, None, "fallback guesses 'a,b;c,d'"),
        ("--relaxation-guess", flag, False, "derive the first guess from the fluctuation path (needs beta)"),
        ("--w0", vector, None, "integrate from (v_start, w0) instead of shooting"),
        ("--max-iter", count, 50, "Newton iterations per guess"),
    ],
    "curvature": [
        ("--metric", tensor, None, "three positive metric coefficients (moments of inertia)"),
        ("--cylinder", key_values, None, "solid cylinder 'r=...,h=...,m=...'"),
    ],
}


def _dest(option: str) -> str:
    return option.lstrip("-").replace("-", "_")


def _options(command):
    opts = list(COMMAND_OPTIONS[command]) + list(SHARED_OPTIONS)
    if command != "curvature":
        opts += MODEL_OPTIONS
    return opts


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eulerarnold", description="Euler-Arnold model laboratory")
    parser.add_argument("--version", action="version", version=f"eulerarnold {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for command in COMMANDS:
        p = sub.add_parser(command, help=COMMAND_HELP[command])
        if command != "curvature":
            p.add_argument("model", nargs="?", default=None, help="built-in name or model file")
        p.add_argument("--config", default=None, help="YAML configuration file")
        for option, convert, default, help_text in _options(command):
            if convert is flag:
                p.add_argument(option, dest=_dest(option), action="store_true", default=None,
                               help=help_text)
            else:
                p.add_argument(option, dest=_dest(option), default=None, help=help_text)
        if command == "curvature":
            # the metric coefficients are conventionally called G1, G2, G3
            p.add_argument("--G", dest="metric", default=None, help=argparse.SUPPRESS)
    return parser


def _normalise_keys(block, where):
    if not isinstance(block, dict):
        raise ConfigError(f"config {where} must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in block.items()}


def load_config(path, command) -> dict:
    """Flatten the shared keys and the block of ``command``; reject unknown keys."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    data = _normalise_keys(data, "file")
    shared = {"model", "seed"} | {_dest(o[0]) for o in SHARED_OPTIONS + MODEL_OPTIONS}
    blocks = set(COMMANDS) | set(CONFIG_BLOCK_ALIASES)
    unknown = set(data) - shared - blocks
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = {k: v for k, v in data.items() if k in shared}
    for name in blocks & set(data):
        target = CONFIG_BLOCK_ALIASES.get(name, name)
        block = _normalise_keys(data[name], f"block {name!r}")
        allowed = {_dest(o[0]) for o in COMMAND_OPTIONS[target]}
        bad = set(block) - allowed
        if bad:
            raise ConfigError(f"unknown keys in config block {name!r}: {sorted(bad)}")
        if target == command:
            merged.update(block)
    if command == "curvature":
        merged.pop("model", None)
        if "G" in merged:
            merged.setdefault("metric", merged.pop("G"))
        stray = set(merged) & {_dest(o[0]) for o in MODEL_OPTIONS}
        if stray:
            raise ConfigError(f"curvature takes no model options: {sorted(stray)}")
    if "seed" in merged and command != "ensemble":
        merged.pop("seed")
    return merged


def resolve_options(args) -> dict:
    """Merge defaults < config file < command-line flags and convert every value."""
    config = load_config(args.config, args.command) if args.config else {}
    values = {}
    for option, convert, default, _ in _options(args.command):
        key = _dest(option)
        raw = getattr(args, key, None)
        if raw is None:
            raw = config.get(key)
        values[key] = default if raw is None else convert(raw)
    if args.command != "curvature":
        values["model"] = args.model if args.model is not None else config.get("model")
        if values["model"] is None:
            raise ConfigError("no model given")
    return values


def load(opts) -> ModelSpec:
    overrides = {k: opts[k] for k in ("G", "Gamma", "gamma", "D", "beta") if opts.get(k) is not None}
    return resolve_model(str(opts["model"]), **overrides)


# -- output --

def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if value is None:
        return "none"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, dict):
        return ",".join(f"{k}={fmt(v)}" for k, v in value.items())
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(fmt(v) for v in np.ravel(np.asarray(value, dtype=object)))
    return str(value)


class Output:
    """Collects a CSV (header, metadata, rows) and a summary block."""

    def __init__(self, command, opts, model=None):
        self.meta = [f"eulerarnold {__version__}", f"command={command}"]
        if model is not None:
            self.meta += [f"model={model.name}", f"dim={model.dim}", f"G={fmt(model.G)}",
                          f"Gamma={fmt(model.Gamma)}", f"D={fmt(model.D)}",
                          f"measure={model.measure.kind}"]
        skip = {"out", "threads", "model", "G", "Gamma", "gamma", "D", "config"}
        for key in sorted(opts):
            if key not in skip and opts[key] is not None:
                self.meta.append(f"{key}={fmt(opts[key])}")
        self.out = opts.get("out", "-")
        self.columns = None
        self.rows = None
        self.summary = []

    def table(self, columns, rows):
        self.columns, self.rows = columns, np.asarray(rows, dtype=float)

    def write(self, stdout):
        if self.columns is None:
            lines = [f"# {m}" for m in self.meta] + self.summary
            self._emit("\n".join(lines) + "\n", stdout)
            return
        buf = io.StringIO()
        buf.write("".join(f"# {m}\n" for m in self.meta))
        buf.write(",".join(self.columns) + "\n")
        if len(self.rows):
            np.savetxt(buf, self.rows, fmt="%.17g", delimiter=",")
        if self.out == "-":
            buf.write("".join(f"# {s}\n" for s in self.summary))
            stdout.write(buf.getvalue())
        else:
            self._emit(buf.getvalue(), None)
            if self.summary:
                stdout.write("\n".join(self.summary) + "\n")

    def _emit(self, content, stdout):
        if self.out == "-":
            stdout.write(content)
        else:
            try:
                Path(self.out).write_text(content)
            except OSError as exc:
                raise ConfigError(f"cannot write {self.out}: {exc.strerror}") from None


def _state(model, value, name, default_zero=False):
    if value is None:
        if default_zero:
            return np.zeros(model.dim)
        raise ConfigError(f"{name} is required")
    if value.shape != (model.dim,):
        raise ConfigError(f"{name} has {value.size} components, model dimension is {model.dim}")
    return value


# -- commands --

def cmd_check(opts):
    model = load(opts)
    out = Output("check", opts, model)
    trace = unimodularity_trace(model.algebra)
    f = model.f
    out.summary = [
        f"model={model.name}",
        f"dim={model.dim}",
        f"antisymmetry_residual={fmt(float(np.max(np.abs(f + f.transpose(1, 0, 2)))))}",
        f"jacobi_residual={fmt(jacobi_residual(model.algebra))}",
        f"unimodularity_trace={fmt(trace)}",
        f"unimodular={fmt(is_unimodular(model.algebra))}",
        f"measure={model.measure.kind}",
        f"G_min_eigenvalue={fmt(float(np.linalg.eigvalsh(model.G).min()))}",
        f"Gamma_min_eigenvalue={fmt(float(np.linalg.eigvalsh(model.Gamma).min()))}",
        f"D_min_eigenvalue={fmt(float(np.linalg.eigvalsh(model.D).min()))}",
    ]
    if opts.get("beta") is not None:
        out.summary.append(f"einstein_violation={fmt(einstein_check(model, opts['beta']))}")
    if opts["at"] is not None:
        v = _state(model, opts["at"], "--at")
        flat = model.replace(measure=InvariantMeasure())
        out.summary.append(f"measure_divergence={fmt(measure_divergence_residual(model, v, opts['h']))}")
        out.summary.append(f"flat_measure_divergence={fmt(measure_divergence_residual(flat, v, opts['h']))}")
    return out


def cmd_simulate(opts):
    model = load(opts)
    v0 = _state(model, opts["v0"], "--v0")
    traj = integrate(model, v0, opts["T"], opts["dt"], dissipative=opts["dissipative"])
    out = Output("simulate", opts, model)
    E = energy(model, traj.states)
    out.table(["t"] + [f"v{a}" for a in range(model.dim)] + ["E"],
              np.column_stack([traj.times, traj.states, E]))
    out.summary = [f"energy_drift={fmt(float(np.max(np.abs(E - E[0]))))}",
                   f"max_energy_increase={fmt(float(np.max(np.diff(E), initial=0.0)))}"]
    return out


def cmd_ensemble(opts):
    model = load(opts)
    v0 = _state(model, opts["v0"], "--v0", default_zero=True)
    stats = sample_equilibrium(model, v0, opts["burn_in"], opts["samples"], opts["thin"], opts["dt"],
                               opts["seed"], chains=opts["chains"], threads=opts["threads"],
                               keep_samples=not opts["no_samples"], allow_naive=opts["allow_naive"])
    out = Output("ensemble", opts, model)
    if not opts["no_samples"]:
        s = stats.samples
        out.table(["sample_index"] + [f"v{a}" for a in range(model.dim)] + ["E"],
                  np.column_stack([np.arange(len(s)), s, energy(model, s)]))
    n = model.dim
    summary = [f"label={stats.label}", f"count={stats.count}"]
    summary += [f"mean.v{a}={fmt(stats.mean[a])}" for a in range(n)]
    summary += [f"second_moment.v{a}v{b}={fmt(stats.second_moments[a, b])}"
                for a in range(n) for b in range(a, n)]
    summary.append(f"energy_edges={fmt(stats.energy_edges)}")
    summary.append(f"energy_counts={fmt(stats.energy_counts)}")
    summary.append(f"energy_overflow={stats.energy_overflow}")
    if opts.get("beta") is not None:
        summary.append(f"einstein_violation={fmt(einstein_check(model, opts['beta']))}")
    out.summary = summary
    return out


def read_field_csv(model, path):
    """Read a grid and ``P`` back from a CSV written by the ``fpk`` command."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read restart file {path}: {exc.strerror}") from None
    grid_spec = next((ln[len("# grid_cells="):] for ln in lines if ln.startswith("# grid_cells=")), None)
    if grid_spec is None:
        raise ConfigError(f"restart file {path} has no grid line")
    grid = Grid.parse(grid_spec)
    check_grid(model, grid)
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    try:
        data = np.loadtxt(io.StringIO("\n".join(body[1:])), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"malformed restart file {path}: {exc}") from None
    if data.shape != (int(np.prod(grid.cells)), model.dim + 2):
        raise ConfigError(f"restart file {path} does not match its grid")
    P = data[:, model.dim].reshape(grid.cells)
    mu = np.broadcast_to(model.measure(grid.points()), grid.cells).astype(float)
    return DensityField(grid, P, mu)


def _fpk_grid(model, opts):
    if opts["grid"] is None:
        raise ConfigError("--grid is required")
    grid = Grid.parse(opts["grid"])
    if opts["eps"] is not None:
        if grid.ndim < 2:
            raise ConfigError("--eps sets the lower edge of axis 1")
        lower = list(grid.lower)
        lower[1] = opts["eps"]
        grid = Grid(tuple(lower), grid.upper, grid.cells)
    check_grid(model, grid)
    return grid


def cmd_fpk(opts):
    model = load(opts)
    drift = opts["drift"]
    if drift == "auto":
        drift = "linear" if model.measure.kind == "halfplane" else "full"
    hamiltonian = drift == "full"
    out = Output("fpk", opts, model)
    summary = [f"drift={drift}"]

    if opts["report"]:
        if opts["beta"] is None:
            raise ConfigError("the report needs --beta")
        grid = _fpk_grid(model, opts)
        report = stationary_distance_report(
            model, grid, opts["beta"], hamiltonian_drift=hamiltonian, control=not opts["no_control"],
            eps_values=() if opts["eps_values"] is None else tuple(opts["eps_values"]),
            archive_path=opts["archive"], max_steps=opts["max_steps"])
        out.meta.append(f"grid_cells={grid.spec()}")
        out.summary = summary + report.as_lines()
        return out

    if opts["restart"] is not None:
        field = read_field_csv(model, opts["restart"])
        grid = field.grid
    else:
        grid = _fpk_grid(model, opts)
        if opts["init"] == "uniform":
            field = uniform_field(model, grid)
        elif opts["init"] == "maxwell":
            if opts["beta"] is None:
                raise ConfigError("--init maxwell needs --beta")
            field = maxwell_boltzmann(model, grid, opts["beta"])
        else:
            center = opts["center"]
            if center is None:
                center = 0.5 * (np.array(grid.lower) + np.array(grid.upper))
            field = gaussian_field(model, grid, center, opts["width"])
    if opts["stationary"]:
        field, info = solve_stationary(model, field, hamiltonian, max_steps=opts["max_steps"],
                                       dt=opts["dt"])
    else:
        if opts["T"] is None:
            raise ConfigError("give --T or --stationary")
        field, info = fpk_evolve(model, field, opts["T"], dt=opts["dt"], hamiltonian_drift=hamiltonian,
                                 max_steps=opts["max_steps"])
    out.meta.append(f"grid_cells={grid.spec()}")
    pts = grid.points().reshape(-1, grid.ndim)
    out.table([f"v{a}" for a in range(grid.ndim)] + ["P", "muP"],
              np.column_stack([pts, field.P.ravel(), field.density.ravel()]))
    summary += [f"time={fmt(info.time)}", f"steps={info.steps}", f"dt={fmt(info.dt)}",
                f"mass={fmt(field.mass())}", f"max_mass_drift={fmt(info.max_mass_drift)}",
                f"clipped_mass={fmt(info.clipped_mass)}"]
    if opts["stationary"]:
        summary.append(f"converged={fmt(info.converged)}")
    if opts["beta"] is not None and model.measure.is_constant:
        mb = maxwell_boltzmann(model, grid, opts["beta"])
        summary.append(f"l1_to_maxwell_boltzmann={fmt(field.normalized().l1_distance(mb))}")
    out.summary = summary
    return out


def cmd_instanton(opts):
    model = load(opts)
    v_start = _state(model, opts["v_start"], "--v-start")
    out = Output("instanton", opts, model)
    if opts["w0"] is not None:
        w0 = _state(model, opts["w0"], "--w0")
        path = integrate_instanton(model, PhasePoint(v_start, w0), opts["T"], opts["dt"])
    else:
        v_end = _state(model, opts["v_end"], "--v-end")
        w_guess = opts["w_guess"]
        if opts["relaxation_guess"]:
            if opts["beta"] is None:
                raise ConfigError("--relaxation-guess needs --beta")
            w_guess, _ = relaxation_guess(model, v_end, opts["T"], opts["dt"], opts["beta"])
        guesses = [] if opts["guesses"] is None else opts["guesses"]
        path = shoot(model, v_start, v_end, opts["T"], opts["dt"], w_guess=w_guess, guesses=guesses,
                     max_iter=opts["max_iter"], threads=opts["threads"])
    n = model.dim
    out.table(["t"] + [f"v{a}" for a in range(n)] + [f"w{a}" for a in range(n)] + ["H", "partial_action"],
              np.column_stack([path.times, path.v, path.w, path.H, path.partial_action]))
    summary = [f"Phi={fmt(path.action)}", f"H_drift={fmt(path.H_drift)}",
               f"w_initial={fmt(path.w[0])}", f"v_final={fmt(path.v[-1])}"]
    for key in ("residual", "iterations", "start_index"):
        if key in path.info:
            summary.append(f"{key}={fmt(path.info[key])}")
    out.summary = summary
    return out


def cmd_curvature(opts):
    out = Output("curvature", opts)
    if (opts["metric"] is None) == (opts["cylinder"] is None):
        raise ConfigError("give exactly one of --G and --cylinder")
    if opts["metric"] is not None:
        G = np.atleast_1d(opts["metric"])
        if G.shape != (3,):
            raise ConfigError("--G needs three metric coefficients")
        out.summary = sectional_curvature(*G).as_lines()
        return out
    cyl = opts["cylinder"]
    unknown = set(cyl) - {"r", "h", "m"}
    if unknown or not {"r", "h"} <= set(cyl):
        raise ConfigError("--cylinder takes r, h and optionally m")
    m = cyl.get("m", 1.0)
    result = coin_stability(cyl["r"], cyl["h"], m)
    out.summary = result.as_lines() + [f"threshold_h={fmt(coin_threshold(cyl['r'], m))}"]
    return out


HANDLERS = {"check": cmd_check, "simulate": cmd_simulate, "ensemble": cmd_ensemble, "fpk": cmd_fpk,
            "instanton": cmd_instanton, "curvature": cmd_curvature}


def _fail(kind, exc, stderr):
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    last = getattr(exc, "last_time", None)
    if last is not None:
        record["last_time"] = last
    stderr.write(json.dumps(record) + "\n")


def run(argv=None, stdout=None, stderr=None) -> int:
    """Execute one command; returns the exit status."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = build_parser().parse_args(argv)
        opts = resolve_options(args)
        with np.errstate(over="ignore", invalid="ignore"):
            result = HANDLERS[args.command](opts)
        result.write(stdout)
    except ConfigError as exc:
        _fail("config", exc, stderr)
        return 2
    except RuntimeFailure as exc:
        _fail("runtime", exc, stderr)
        return 3
    except EulerArnoldError as exc:
        _fail("runtime", exc, stderr)
        return 3
    return 0


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())

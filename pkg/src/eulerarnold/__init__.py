"""Finite-dimensional Euler-Arnold models with dissipation and random forcing.

Modules
-------
algebra
    Structure constants, model definitions and the drift vector fields.
dynamics
    Deterministic integration and rigid-body curvature analysis.
langevin
    Euler-Maruyama sampling of the randomly forced flow.
fpk
    Flux-form solver for the measure-corrected Fokker-Planck-Kramers equation.
instanton
    WKB Hamiltonian, instanton integration and shooting.
cli
    The ``eulerarnold`` command.
"""
from .algebra import (InvariantMeasure, ModelSpec, StructureConstants, dissipative_drift, energy,
                      geodesic_drift, jacobi_residual, measure_divergence_residual,
                      unimodularity_trace)
from .errors import (BlowUpError, ConfigError, ConvergenceError, EulerArnoldError,
                     MassDriftError, RuntimeFailure, StabilityError)
from .models import builtin, load_model, resolve_model

__version__ = "0.1.0"

"""Simulation and certificate toolkit for ergodicity of regime-switching diffusions."""
from . import chain, coupling, distance, errors, lyapunov, rates, sde, subordination
from .chain import (GeneratorMatrix, coupling_constants, invariant_distribution,
                    simulate_chain, transition_matrix, validate_generator)
from .rng import stream
from .sde import RSModel, builtin_model, integrate

__version__ = "0.1.0"

__all__ = [
    "chain", "coupling", "distance", "errors", "lyapunov", "rates", "sde", "subordination",
    "GeneratorMatrix", "coupling_constants", "invariant_distribution", "simulate_chain",
    "transition_matrix", "validate_generator", "stream", "RSModel", "builtin_model", "integrate",
]

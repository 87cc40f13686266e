"""Perfect sampling and finite-size ergodicity certificates for 1D probabilistic cellular automata."""
from __future__ import annotations

from .certifier import (
    Certificate,
    PerturbationDecomposition,
    decompose,
    estimate_rho,
    exact_rho_small,
    max_epsilon,
    perturbation_transfer,
    search_L,
)
from .cftp import (
    FlowSpec,
    backward_batch,
    backward_run,
    coalescence_tail,
    monotone_sandwich,
    sample_window,
    tile_coalesced,
)
from .core import Alphabet, Configuration, EnvelopeConfiguration, Kernel, validate_kernel
from .grid import RandomGrid
from .models import ModelSpec, is_monotone, noisy_majority, random_kernel, stavskaya_noisy, uniform_mixture

__version__ = "0.1.0"

__all__ = [
    "Alphabet", "Certificate", "Configuration", "EnvelopeConfiguration", "FlowSpec", "Kernel",
    "ModelSpec", "PerturbationDecomposition", "RandomGrid", "backward_batch", "backward_run",
    "coalescence_tail", "decompose", "estimate_rho", "exact_rho_small", "is_monotone",
    "max_epsilon", "monotone_sandwich", "noisy_majority", "perturbation_transfer", "random_kernel",
    "sample_window", "search_L", "stavskaya_noisy", "tile_coalesced", "uniform_mixture",
    "validate_kernel",
]

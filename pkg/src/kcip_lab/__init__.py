"""Exact and Monte Carlo tools for the kinetically constrained Ising process
on the discrete torus, together with its exclusion-type companion chains."""
from .chains import Configuration, KernelSpec, ParticleSystem
from .errors import (ConfigError, KcipLabError, NotReversibleError, ReducibleChainError,
                     StateCapError)
from .lattice import TorusLattice, build_torus

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Configuration", "KcipLabError", "KernelSpec", "NotReversibleError",
    "ParticleSystem", "ReducibleChainError", "StateCapError", "TorusLattice",
    "build_torus", "__version__",
]

"""Branching random walks on the binary hypercube: kernels, spectral bounds,
seeded simulation and Monte-Carlo statistics."""

__version__ = "0.1.0"

from .errors import DisconnectedKernelError, GuardError
from .kernels import (
    CompleteBipartite,
    CompleteGraph,
    ExplicitMatrix,
    Kernel,
    Lazy,
    Mixture,
    Power,
    SingleFlip,
    VertexLabel,
    kernel_from_config,
)
from .sim import Population, SimConfig, Trajectory, replica_rng, run
from .stats import Aggregate, monte_carlo

__all__ = [
    "Aggregate",
    "CompleteBipartite",
    "CompleteGraph",
    "DisconnectedKernelError",
    "ExplicitMatrix",
    "GuardError",
    "Kernel",
    "Lazy",
    "Mixture",
    "Population",
    "Power",
    "SimConfig",
    "SingleFlip",
    "Trajectory",
    "VertexLabel",
    "kernel_from_config",
    "monte_carlo",
    "replica_rng",
    "run",
]

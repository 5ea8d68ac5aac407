"""Random walks among random conductances on finite lattice boxes."""

from .cluster import ClusterDecomposition, decompose
from .env import BoxSpec, Environment, LawSpec, TrapSpec, constant, plant_trap, sample_iid
from .kernel import build_kernel, heat_diagonal, sample_bridges

__version__ = "0.1.0"

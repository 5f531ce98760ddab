"""Sparse beamspace channel estimation with a top-(K,1) DC penalty.

Submodules: ``channel`` (simulation and problem construction), ``regularizer``
(top-(K,1) norm and penalty certificates), ``solvers`` (DC gradient
projection and baselines), ``metrics``, ``envelope`` (JSON interchange),
``bench`` (experiment runner) and ``cli``.
"""
from . import kernels
from .channel import ChannelParams, SparseProblem, generate_channel, make_measurement_matrix, observe, columnize
from .regularizer import dc_gap, top_k1_norm
from .solvers import SolverConfig, solve

__version__ = "0.1.0"


__all__ = [
    "ChannelParams", "SparseProblem", "generate_channel", "make_measurement_matrix", "observe", "columnize",
    "dc_gap", "top_k1_norm", "SolverConfig", "solve",
]

"""Probabilistic meshless forward model and particle filtering for electrical impedance tomography."""

from .config import RunConfig
from .forward import ForwardModel, NumericalError
from .geometry import build_electrodes, concentric_design, design_with_total
from .kernel import SEKernel, nystrom_eigs
from .likelihood import marginal_loglik, reference_protocol

__version__ = "0.1.0"

__all__ = [
    "ForwardModel", "NumericalError", "RunConfig", "SEKernel", "build_electrodes", "concentric_design",
    "design_with_total", "marginal_loglik", "nystrom_eigs", "reference_protocol",
]

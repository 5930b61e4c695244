"""ampcap: capacity of peak-amplitude-limited MIMO Gaussian channels.

Computes the capacity and the capacity-achieving discrete amplitude
distribution of an N x N complex AWGN channel under the norm constraint
|X| <= A, with certified lower/upper bounds from nested iterative solvers.
"""

from .model import (
    ChannelParams,
    InputPmf,
    capacity_offset,
    ell_functional,
    kappa_lower_bound,
    output_log_density,
    params_from_snr,
)
from .quadrature import QuadratureSpec
from .solver import CapacityResult, InnerConfig, OuterConfig, inner_layer, outer_layer

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "InputPmf",
    "QuadratureSpec",
    "InnerConfig",
    "OuterConfig",
    "CapacityResult",
    "params_from_snr",
    "capacity_offset",
    "output_log_density",
    "ell_functional",
    "kappa_lower_bound",
    "inner_layer",
    "outer_layer",
    "__version__",
]

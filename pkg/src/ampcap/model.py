"""Channel model: parameters, shell PMFs, output mixture and capacity functional.

The N x N complex AWGN channel with noise CN(0, 2 I_N) and peak constraint
|X| <= A reduces, for isotropic inputs, to a scalar problem in the amplitude:
conditioned on |X| = rho, the squared output norm |Y|^2 is chi2_{2N}(rho^2).
A discrete amplitude law with radii {rho_i} and masses {p_i} therefore
induces the output mixture density sum_i p_i f_{chi2_{2N}(rho_i^2)}.

Capacity in nats is ``max ell(F) - offset`` where
``ell = h(|Y|^2) + (N-1) E[log |Y|^2]`` and ``offset = N log(2e) + log Gamma(N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sc

from .quadrature import PanelGrid, QuadratureSpec, build_grid
from .specfun import Chi2Params, log_ncx2_pdf, ncx2_cdf

__all__ = [
    "ChannelParams",
    "InputPmf",
    "ShellGeometry",
    "params_from_snr",
    "capacity_offset",
    "output_log_density",
    "mixture_cdf",
    "mixture_grid",
    "shell_weights",
    "ell_functional",
    "kappa_lower_bound",
    "shell_surface_measure",
    "nats_to_bits",
    "bits_to_nats",
]

LN2 = math.log(2.0)

# Radii closer than this fraction of A are considered one shell.
MERGE_TOL_FACTOR = 1e-6
# Shells below this mass are dropped after the inner layer converges.
PRUNE_THRESHOLD = 1e-9


def nats_to_bits(x: float) -> float:
    return x / LN2


def bits_to_nats(x: float) -> float:
    return x * LN2


@dataclass(frozen=True)
class ChannelParams:
    """Channel dimension N (complex) and amplitude budget A, with SNR = A^2/(2N)."""

    n_dim: int
    amplitude: float

    def __post_init__(self):
        if self.n_dim < 1:
            raise ValueError("n_dim must be a positive integer")
        if not (np.isfinite(self.amplitude) and self.amplitude > 0.0):
            raise ValueError("amplitude must be positive and finite")

    @property
    def snr_linear(self) -> float:
        return self.amplitude**2 / (2.0 * self.n_dim)

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr_linear)


def params_from_snr(n_dim: int, snr_db: float) -> ChannelParams:
    """Channel with amplitude A = sqrt(2 N 10^(snr_db/10))."""
    amplitude = math.sqrt(2.0 * n_dim * 10.0 ** (snr_db / 10.0))
    return ChannelParams(n_dim=n_dim, amplitude=amplitude)


@dataclass(frozen=True)
class InputPmf:
    """Discrete amplitude distribution: strictly decreasing radii with positive masses."""

    radii: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.radii) != len(self.probs) or len(self.radii) == 0:
            raise ValueError("radii and probs must be equal-length and nonempty")
        r = np.asarray(self.radii, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if np.any(r < 0.0) or np.any(np.diff(r) >= 0.0):
            raise ValueError("radii must be strictly decreasing and nonnegative")
        if np.any(p <= 0.0):
            raise ValueError("shell probabilities must be positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1 (got {p.sum()!r})")

    @property
    def k(self) -> int:
        return len(self.radii)

    @property
    def radii_array(self) -> np.ndarray:
        return np.asarray(self.radii, dtype=float)

    @property
    def probs_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @classmethod
    def single_shell(cls, radius: float) -> "InputPmf":
        return cls(radii=(float(radius),), probs=(1.0,))

    @classmethod
    def from_arrays(cls, radii, probs, merge_tol: float = 0.0) -> "InputPmf":
        """Sort descending, merge radii within ``merge_tol`` (masses summed,
        merged radius is the mass-weighted mean), renormalize."""
        r = np.asarray(radii, dtype=float)
        p = np.asarray(probs, dtype=float)
        order = np.argsort(-r)
        r, p = r[order], p[order]
        out_r, out_p = [r[0]], [p[0]]
        for ri, pi in zip(r[1:], p[1:]):
            if out_r[-1] - ri <= merge_tol:
                w = out_p[-1] + pi
                out_r[-1] = (out_r[-1] * out_p[-1] + ri * pi) / w
                out_p[-1] = w
            else:
                out_r.append(ri)
                out_p.append(pi)
        p_arr = np.asarray(out_p)
        p_arr = p_arr / p_arr.sum()
        return cls(radii=tuple(float(x) for x in out_r), probs=tuple(p_arr.tolist()))

    @classmethod
    def uniform(cls, radii) -> "InputPmf":
        r = np.asarray(radii, dtype=float)
        return cls.from_arrays(r, np.full(len(r), 1.0 / len(r)))

    def merged(self, tol: float) -> "InputPmf":
        """Combine shells whose radii differ by at most ``tol``."""
        return InputPmf.from_arrays(self.radii_array, self.probs_array, tol)

    def pruned(self, threshold: float = PRUNE_THRESHOLD) -> "InputPmf":
        """Drop shells with mass below ``threshold`` (keeping at least one shell)."""
        p = self.probs_array
        keep = p >= threshold
        if keep.all():
            return self
        if not keep.any():
            keep[np.argmax(p)] = True
        return InputPmf.from_arrays(self.radii_array[keep], p[keep])


@dataclass(frozen=True)
class ShellGeometry:
    """Hyper-surface measures S_i = 2 pi^N rho_i^(2N-1) / Gamma(N) of a shell set."""

    surface_measure: tuple[float, ...]

    @classmethod
    def for_pmf(cls, pmf: InputPmf, params: ChannelParams) -> "ShellGeometry":
        s = tuple(shell_surface_measure(params.n_dim, r) for r in pmf.radii)
        return cls(surface_measure=s)


def shell_surface_measure(n_dim: int, rho: float) -> float:
    """Surface measure of the sphere |x| = rho in C^N; zero for the origin."""
    if rho == 0.0:
        return 0.0
    return 2.0 * math.pi**n_dim * rho ** (2 * n_dim - 1) / math.gamma(n_dim)


def capacity_offset(params: ChannelParams) -> float:
    """Constant N log(2e) + log Gamma(N) subtracted from ell to get capacity (nats)."""
    n = params.n_dim
    return n * (LN2 + 1.0) + float(sc.gammaln(n))


def shell_weights(pmf: InputPmf, params: ChannelParams, dof_offset: int = 0) -> list[Chi2Params]:
    """Conditional output laws chi2_{2N + dof_offset}(rho_i^2), one per shell."""
    k = 2 * params.n_dim + dof_offset
    return [Chi2Params(k=k, lam=float(r * r)) for r in pmf.radii]


def output_log_density(pmf: InputPmf, params: ChannelParams, y):
    """Log of the mixture density of |Y|^2, a log-sum-exp over the shell laws."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    logp = np.log(pmf.probs_array)
    terms = np.empty((pmf.k, y_arr.size))
    for i, w in enumerate(shell_weights(pmf, params)):
        terms[i] = logp[i] + log_ncx2_pdf(w, y_arr)
    out = sc.logsumexp(terms, axis=0)
    if np.isscalar(y) or np.ndim(y) == 0:
        return float(out[0])
    return out


def mixture_cdf(pmf: InputPmf, params: ChannelParams, y):
    """CDF of |Y|^2 under the shell mixture."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.zeros(y_arr.size)
    for p_i, w in zip(pmf.probs_array, shell_weights(pmf, params)):
        out += p_i * ncx2_cdf(w, y_arr)
    if np.isscalar(y) or np.ndim(y) == 0:
        return float(out[0])
    return out


def mixture_grid(pmf: InputPmf, params: ChannelParams,
                 spec: QuadratureSpec | None = None) -> PanelGrid:
    """Shared quadrature grid resolving every shell's conditional law."""
    return build_grid(shell_weights(pmf, params), spec)


def ell_functional(pmf: InputPmf, params: ChannelParams,
                   spec: QuadratureSpec | None = None,
                   grid: PanelGrid | None = None) -> float:
    """``ell = sum_i p_i int f_i(y) log(y^(N-1) / f_mix(y)) dy`` in nats.

    The capacity lower bound achieved by ``pmf`` is ``ell - capacity_offset``.
    """
    spec = spec if spec is not None else QuadratureSpec()
    if grid is None:
        grid = mixture_grid(pmf, params, spec)
    y = grid.nodes
    logp = np.log(pmf.probs_array)
    logf = np.stack([log_ncx2_pdf(w, y) for w in shell_weights(pmf, params)])
    logmix = sc.logsumexp(logf + logp[:, None], axis=0)
    g = (params.n_dim - 1) * np.log(y) - logmix
    total = 0.0
    for i in range(pmf.k):
        total += pmf.probs_array[i] * grid.integrate(np.exp(logf[i]) * g)
    return total


def kappa_lower_bound(params: ChannelParams) -> int:
    """Guaranteed minimum number of mass points of the optimal amplitude law,
    ``ceil(sqrt(((A^2 + 2e)^2 + 8 pi (N-1)) / (8 pi e (N + A^2/2))))``."""
    a2 = params.amplitude**2
    n = params.n_dim
    num = (a2 + 2.0 * math.e) ** 2 + 8.0 * math.pi * (n - 1)
    den = 8.0 * math.pi * math.e * (n + 0.5 * a2)
    return max(1, math.ceil(math.sqrt(num / den)))

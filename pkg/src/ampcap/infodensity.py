"""Information density of a shell PMF and its closed-form derivative.

The information density at amplitude rho is

    i(rho; F) = int f_{chi2_{2N}(rho^2)}(y) log( y^(N-1) / f_mix(y) ) dy - offset,

constant and equal to capacity on the optimal support (KKT conditions).  Its
derivative has a closed form as a double expectation over the posterior of
the shell amplitude given an auxiliary output Q' ~ chi2_{2(N+1)}(rho^2); the
Bessel-ratio recurrence reduces the inner term to

    E[ sum_i w_i(q) * (rho_i / (2 sqrt(q))) * I_N(rho_i sqrt(q))/I_{N-1}(rho_i sqrt(q)) - 1/2 ]

with posterior weights w_i(q) = p_i f_i(q) / f_mix(q), which is free of the
1/q cancellations of the raw form.
"""

from __future__ import annotations

import numpy as np
from scipy import special as sc

from .model import ChannelParams, InputPmf, capacity_offset, shell_weights
from .quadrature import (
    PanelGrid,
    QuadratureSpec,
    build_grid,
    coverage_noncentralities,
    integrate_function,
    integrate_weighted,
    truncation_window,
)
from .specfun import Chi2Params, bessel_ratio, log_ncx2_pdf, log_ncx2_pdf_grid, ncx2_cdf

__all__ = [
    "InfoDensityContext",
    "info_density",
    "info_density_derivative",
    "derivative_lower_bound",
    "aux_density",
    "aux_density_limit_check",
    "aux_density_normalization",
]


class InfoDensityContext:
    """Caches the output mixture of a fixed PMF on a shared quadrature grid.

    The grid is built to resolve chi2_{2N}(rho^2) for every rho in [0, A],
    so information densities at arbitrary amplitudes are plain dot products.
    Instances are immutable after construction and safe to share across
    threads.
    """

    def __init__(self, pmf: InputPmf, params: ChannelParams,
                 spec: QuadratureSpec | None = None, grid: PanelGrid | None = None):
        self.pmf = pmf
        self.params = params
        self.spec = spec if spec is not None else QuadratureSpec()
        k = 2 * params.n_dim
        if grid is None:
            lams = np.unique(np.concatenate([
                pmf.radii_array**2,
                coverage_noncentralities(k, params.amplitude**2),
            ]))
            grid = build_grid([Chi2Params(k, float(l)) for l in lams], self.spec)
        self.grid = grid
        y = grid.nodes
        self.offset = capacity_offset(params)
        logf = log_ncx2_pdf_grid(k, pmf.radii_array**2, y)
        logp = np.log(pmf.probs_array)
        self._logmix = sc.logsumexp(logf + logp[:, None], axis=0)
        # Weighted integrand of i(rho): one dot with a conditional pdf row.
        self._g_weights = grid.w_kron * ((params.n_dim - 1) * np.log(y) - self._logmix)

    def log_mixture(self, y=None) -> np.ndarray:
        """Cached log output density on the grid nodes (or fresh at given y)."""
        if y is None:
            return self._logmix
        from .model import output_log_density

        return output_log_density(self.pmf, self.params, y)

    def info_density_many(self, rhos) -> np.ndarray:
        """Vectorized i(rho) over an array of amplitudes in [0, A]."""
        rho_arr = np.atleast_1d(np.asarray(rhos, dtype=float))
        if np.any(rho_arr < 0.0) or np.any(rho_arr > self.params.amplitude * (1 + 1e-12)):
            raise ValueError("amplitudes must lie in [0, A]")
        k = 2 * self.params.n_dim
        out = np.empty(rho_arr.size)
        chunk = 256
        for s in range(0, rho_arr.size, chunk):
            block = rho_arr[s:s + chunk]
            pdfs = np.exp(log_ncx2_pdf_grid(k, block**2, self.grid.nodes))
            out[s:s + chunk] = pdfs @ self._g_weights
        return out - self.offset

    def info_density(self, rho: float) -> float:
        return float(self.info_density_many([rho])[0])


def info_density(ctx: InfoDensityContext, rho: float) -> float:
    """i(rho; F) in nats for rho in [0, A]."""
    return ctx.info_density(rho)


def info_density_derivative(ctx: InfoDensityContext, rho: float) -> float:
    """d/drho of the information density at rho > 0 (0 at rho = 0 by symmetry)."""
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    if rho == 0.0:
        return 0.0
    params = ctx.params
    n = params.n_dim
    radii = ctx.pmf.radii_array
    logp = np.log(ctx.pmf.probs_array)
    k = 2 * n
    weights_2n = shell_weights(ctx.pmf, params)

    def g(q: np.ndarray) -> np.ndarray:
        logf = np.stack([log_ncx2_pdf(w, q) for w in weights_2n])
        logmix = sc.logsumexp(logf + logp[:, None], axis=0)
        post = np.exp(logf + logp[:, None] - logmix[None, :])
        sq = np.sqrt(q)
        acc = np.zeros_like(q)
        for i, r in enumerate(radii):
            if r == 0.0:
                continue
            acc += post[i] * (r / (2.0 * sq)) * bessel_ratio(float(n), r * sq)
        return acc - 0.5

    outer = integrate_weighted(g, Chi2Params(k + 2, rho * rho), ctx.spec)
    return -2.0 * rho * outer


def derivative_lower_bound(c: float, rho: float, params: ChannelParams) -> float:
    """Positive bound rho / (1 + c^2 (2N + rho^2) / (4 (N - 1/2)^2)) valid for
    any PMF supported on [0, c] and any rho > c."""
    if not 0.0 <= c < rho:
        raise ValueError("need 0 <= c < rho")
    n = params.n_dim
    denom = 1.0 + c * c * (2.0 * n + rho * rho) / (4.0 * (n - 0.5) ** 2)
    return rho / denom


def aux_density(y, rho1: float, rho2: float, params: ChannelParams):
    """Scaled CDF difference (F_{chi2(rho2^2)}(y) - F_{chi2(rho1^2)}(y)) / (rho1^2 - rho2^2).

    A probability density in y for rho1 > rho2 >= 0; converges to the
    chi2_{2(N+1)}(rho2^2) density as rho1 -> rho2.
    """
    if not rho1 > rho2 >= 0.0:
        raise ValueError("need rho1 > rho2 >= 0")
    k = 2 * params.n_dim
    f2 = ncx2_cdf(Chi2Params(k, rho2 * rho2), y)
    f1 = ncx2_cdf(Chi2Params(k, rho1 * rho1), y)
    return (f2 - f1) / (rho1 * rho1 - rho2 * rho2)


def aux_density_limit_check(rho: float, h: float, y, params: ChannelParams):
    """Residual |f_Q(y; rho+h, rho) - f_{chi2_{2(N+1)}(rho^2)}(y)|; O(h) in h."""
    if not (rho > 0.0 and 0.0 < h <= rho / 10.0):
        raise ValueError("need rho > 0 and h in (0, rho/10]")
    fq = aux_density(y, rho + h, rho, params)
    limit = np.exp(log_ncx2_pdf(Chi2Params(2 * (params.n_dim + 1), rho * rho), y))
    return np.abs(fq - limit)


def aux_density_normalization(rho1: float, rho2: float, params: ChannelParams,
                              spec: QuadratureSpec | None = None) -> float:
    """Integral of the auxiliary density over (0, inf); equals 1 by construction."""
    spec = spec if spec is not None else QuadratureSpec()
    k = 2 * params.n_dim
    lo1, hi1 = truncation_window(Chi2Params(k, rho1 * rho1), spec.tail_mass)
    lo2, _ = truncation_window(Chi2Params(k, rho2 * rho2), spec.tail_mass)
    y_lo = min(lo1, lo2)

    def f(y):
        return aux_density(y, rho1, rho2, params)

    # Beyond hi1 both CDFs are within tail_mass of 1; the residue integrates to
    # at most the mean gap left outside, which the window makes negligible.
    return integrate_function(f, y_lo, hi1, spec, n_initial=32)

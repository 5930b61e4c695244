"""Adaptive Gauss-Kronrod quadrature against chi-squared weights.

All capacity integrals have the form ``int_0^inf g(y) f_{chi2_k(lam)}(y) dy``.
The weight concentrates its mass in a window that :func:`truncation_window`
locates from the CDF; a 15-point Kronrod rule with adaptive panel splitting
then resolves the integral to a requested absolute tolerance.

For mixtures the solver needs many integrals against the same family of
weights, so :func:`build_grid` produces one shared panel grid (union of the
per-shell windows, refined until every shell is resolved) on which integrands
are cached and integrated as plain dot products.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .specfun import Chi2Params, log_ncx2_pdf, ncx2_cdf

__all__ = [
    "NonConvergent",
    "QuadratureSpec",
    "truncation_window",
    "integrate_weighted",
    "integrate_function",
    "PanelGrid",
    "build_grid",
    "coverage_noncentralities",
]

# 15-point Kronrod extension of 7-point Gauss (QUADPACK dqk15 constants).
_XGK_HALF = np.array([
    0.9914553711208126, 0.9491079123427585, 0.8648644233597691,
    0.7415311855993944, 0.5860872354676911, 0.4058451513773972,
    0.2077849550078985, 0.0,
])
_WGK_HALF = np.array([
    0.0229353220105292, 0.0630920926299785, 0.1047900103222502,
    0.1406532597155259, 0.1690047266392679, 0.1903505780647854,
    0.2044329400752989, 0.2094821410847278,
])
_WG_HALF = np.array([
    0.1294849661688697, 0.2797053914892767, 0.3818300505051189,
    0.4179591836734694,
])

_XGK = np.concatenate([-_XGK_HALF[:-1], _XGK_HALF[::-1]])          # ascending, 15 nodes
_WGK = np.concatenate([_WGK_HALF[:-1], _WGK_HALF[::-1]])
_WG = np.zeros(15)
_WG[1:14:2] = np.concatenate([_WG_HALF[:-1], _WG_HALF[::-1]])      # Gauss nodes sit at odd indices


class NonConvergent(RuntimeError):
    """Adaptive refinement exhausted its panel budget before reaching tolerance."""

    def __init__(self, message: str, achieved_error: float, abs_tol: float):
        super().__init__(f"{message} (achieved error {achieved_error:.3e}, requested {abs_tol:.3e})")
        self.achieved_error = achieved_error
        self.abs_tol = abs_tol


@dataclass(frozen=True)
class QuadratureSpec:
    """Truncation and refinement policy for the semi-infinite integrals."""

    abs_tol: float = 1e-9
    tail_mass: float = 1e-12
    max_panels: int = 1024

    def __post_init__(self):
        if not self.abs_tol > 0.0:
            raise ValueError("abs_tol must be positive")
        if not 0.0 < self.tail_mass < 1e-6:
            raise ValueError("tail_mass must lie in (0, 1e-6)")
        if self.max_panels < 64:
            raise ValueError("max_panels must be at least 64")


def truncation_window(weight: Chi2Params, tail_mass: float) -> tuple[float, float]:
    """Window [y_lo, y_hi] leaving at most ``tail_mass/2`` of the weight outside each end.

    The window always contains the mean k + lam.
    """
    target = 0.5 * tail_mass
    mu = weight.mean

    lo, hi = 0.0, mu
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        if ncx2_cdf(weight, mid) <= target:
            lo = mid
        else:
            hi = mid
    y_lo = lo
    if y_lo <= 0.0:
        # CDF(y) -> 0 as y -> 0+, so some positive point always qualifies.
        y_lo = mu
        while ncx2_cdf(weight, y_lo) > target:
            y_lo *= 0.5
    assert y_lo > 0.0

    hi = mu + 10.0 * weight.std + 10.0
    while 1.0 - ncx2_cdf(weight, hi) > target:
        hi = mu + 2.0 * (hi - mu)
    lo = mu
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if 1.0 - ncx2_cdf(weight, mid) <= target:
            hi = mid
        else:
            lo = mid
    y_hi = hi
    return y_lo, y_hi


def _landmarks(weight: Chi2Params, y_lo: float, y_hi: float) -> np.ndarray:
    """Breakpoints clustered around the weight's bump so the initial panels see it."""
    mu, sigma = weight.mean, weight.std
    offsets = np.array([-8.0, -4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0, 8.0])
    pts = mu + offsets * sigma
    pts = pts[(pts > y_lo) & (pts < y_hi)]
    return np.concatenate([[y_lo], pts, [y_hi]])


def _panel_eval(h, a: float, b: float):
    half = 0.5 * (b - a)
    nodes = 0.5 * (a + b) + half * _XGK
    vals = np.asarray(h(nodes), dtype=float)
    i_kron = half * float(vals @ _WGK)
    i_gauss = half * float(vals @ _WG)
    return i_kron, abs(i_kron - i_gauss)


def _adaptive_gk(h, edges: np.ndarray, spec: QuadratureSpec) -> float:
    """Adaptive GK15 over the panels defined by ``edges`` (worst panel split first)."""
    heap = []
    total = 0.0
    total_err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = _panel_eval(h, a, b)
        total += val
        total_err += err
        heapq.heappush(heap, (-err, a, b, val))
    n_panels = len(heap)
    while total_err > spec.abs_tol:
        if n_panels >= spec.max_panels:
            raise NonConvergent("quadrature did not reach tolerance", total_err, spec.abs_tol)
        neg_err, a, b, val = heapq.heappop(heap)
        total -= val
        total_err += neg_err  # neg_err = -err
        mid = 0.5 * (a + b)
        for aa, bb in ((a, mid), (mid, b)):
            v, e = _panel_eval(h, aa, bb)
            total += v
            total_err += e
            heapq.heappush(heap, (-e, aa, bb, v))
        n_panels += 1
    return total


def integrate_weighted(g, weight: Chi2Params, spec: QuadratureSpec | None = None) -> float:
    """``int g(y) f_{chi2_k(lam)}(y) dy`` over the truncated window.

    ``g`` must accept a 1-D ndarray of strictly positive points.
    """
    spec = spec if spec is not None else QuadratureSpec()
    y_lo, y_hi = truncation_window(weight, spec.tail_mass)

    def h(y):
        return np.asarray(g(y), dtype=float) * np.exp(log_ncx2_pdf(weight, y))

    edges = _landmarks(weight, y_lo, y_hi)
    return _adaptive_gk(h, edges, spec)


def integrate_function(f, a: float, b: float, spec: QuadratureSpec | None = None,
                       n_initial: int = 16) -> float:
    """Adaptive GK15 for a plain integrand on a finite interval."""
    if not b > a:
        raise ValueError("integration interval must satisfy b > a")
    spec = spec if spec is not None else QuadratureSpec()
    edges = np.linspace(a, b, n_initial + 1)
    return _adaptive_gk(f, edges, spec)


def coverage_noncentralities(k: int, lam_max: float) -> np.ndarray:
    """Noncentralities tiling [0, lam_max] so the chi2_k bumps overlap.

    Consecutive values differ by about two standard deviations of the bump,
    which makes a grid built on them resolve the density for any intermediate
    noncentrality as well.
    """
    lams = [0.0]
    while lams[-1] < lam_max:
        lams.append(lams[-1] + 2.0 * np.sqrt(2.0 * (k + 2.0 * lams[-1])))
    lams[-1] = lam_max
    return np.unique(np.asarray(lams))


@dataclass
class PanelGrid:
    """Fixed Kronrod grid shared by all integrals of one solver state.

    ``nodes`` are the concatenated panel nodes; integrating a sampled
    integrand is ``values @ w_kron``.  The embedded Gauss rule provides a
    per-integral error estimate without extra evaluations.
    """

    edges: np.ndarray    # (P+1,)
    nodes: np.ndarray    # (15*P,)
    w_kron: np.ndarray   # (15*P,)
    w_gauss: np.ndarray  # (15*P,)

    @property
    def n_panels(self) -> int:
        return len(self.edges) - 1

    @property
    def window(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])

    def integrate(self, values: np.ndarray) -> float:
        return float(values @ self.w_kron)

    def error_estimate(self, values: np.ndarray) -> float:
        per_node = values * (self.w_kron - self.w_gauss)
        return float(np.abs(per_node.reshape(-1, 15).sum(axis=1)).sum())


def _grid_from_edges(edges: np.ndarray) -> PanelGrid:
    a = edges[:-1]
    half = 0.5 * np.diff(edges)
    nodes = (a + half)[:, None] + half[:, None] * _XGK[None, :]
    w_kron = half[:, None] * _WGK[None, :]
    w_gauss = half[:, None] * _WG[None, :]
    return PanelGrid(edges=edges, nodes=nodes.ravel(), w_kron=w_kron.ravel(),
                     w_gauss=w_gauss.ravel())


def build_grid(weights: list[Chi2Params], spec: QuadratureSpec | None = None,
               max_grid_panels: int | None = None) -> PanelGrid:
    """Shared panel grid resolving every weight in ``weights``.

    The window is the union of the per-weight windows.  Panels are split
    until, for each weight, both the normalization integral and an
    entropy-type surrogate (pdf times |log pdf| + |log y|) carry a Kronrod
    error estimate below ``abs_tol``.
    """
    spec = spec if spec is not None else QuadratureSpec()
    if not weights:
        raise ValueError("need at least one weight")
    cap = max_grid_panels if max_grid_panels is not None else max(4096, 4 * spec.max_panels)

    # The chi2 family is stochastically increasing in both k and lam, so the
    # union of the per-weight windows is bracketed by the two extreme laws.
    k_min = min(w.k for w in weights)
    k_max = max(w.k for w in weights)
    lam_min = min(w.lam for w in weights)
    lam_max = max(w.lam for w in weights)
    y_lo = truncation_window(Chi2Params(k_min, lam_min), spec.tail_mass)[0]
    y_hi = truncation_window(Chi2Params(k_max, lam_max), spec.tail_mass)[1]
    breaks = [np.array([y_lo, y_hi])]
    for w in weights:
        breaks.append(_landmarks(w, y_lo, y_hi))
    edges = np.unique(np.concatenate(breaks))

    tol = 0.5 * spec.abs_tol
    while True:
        grid = _grid_from_edges(edges)
        logy = np.log(grid.nodes)
        split = np.zeros(grid.n_panels, dtype=bool)
        worst = 0.0
        for w in weights:
            logf = log_ncx2_pdf(w, grid.nodes)
            pdf = np.exp(logf)
            for vals in (pdf, pdf * (np.abs(logf) + np.abs(logy))):
                per_panel = np.abs(
                    (vals * (grid.w_kron - grid.w_gauss)).reshape(-1, 15).sum(axis=1))
                total = per_panel.sum()
                worst = max(worst, total)
                if total > tol:
                    split |= per_panel > tol / (2.0 * grid.n_panels)
        if not split.any():
            return grid
        if grid.n_panels + split.sum() > cap:
            raise NonConvergent("shared grid refinement exceeded panel budget", worst, tol)
        mids = 0.5 * (edges[:-1][split] + edges[1:][split])
        edges = np.unique(np.concatenate([edges, mids]))

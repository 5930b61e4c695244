"""Nested solvers for the amplitude-constrained capacity.

Inner layer: a Blahut-Arimoto variant on a fixed radii set.  With
``J_i = int f_i(y) (log y^(N-1) - log f_mix(y)) dy`` the probability update
``p_i' = p_i exp(J_i) / Z`` makes the recorded objective collapse to
``l = log sum_i p_i exp(J_i)``, which is nondecreasing and converges to the
mutual information of the radii set; ``l - offset`` is a certified capacity
lower bound at every iterate.

Outer layer: starts from the guaranteed minimum number of shells, inserts a
new shell at the origin whenever the information density at 0 dominates the
whole interval, climbs the interior radii by projected gradient ascent in
rho^2, and stops when the dual upper bound ``max_rho i(rho)`` meets the
lower bound within the requested precision.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sc

from .model import (
    LN2,
    MERGE_TOL_FACTOR,
    PRUNE_THRESHOLD,
    ChannelParams,
    InputPmf,
    capacity_offset,
    kappa_lower_bound,
)
from .quadrature import (
    QuadratureSpec,
    build_grid,
    coverage_noncentralities,
    integrate_weighted,
)
from .specfun import Chi2Params, log_ncx2_pdf_grid

__all__ = [
    "InnerConfig",
    "OuterConfig",
    "InnerResult",
    "SolverDiagnostics",
    "CapacityResult",
    "inner_layer",
    "outer_layer",
    "mi_gradient",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InnerConfig:
    """Inner-layer stopping rule: the last ``m_window`` objective values must
    agree within ``eps1`` nats."""

    eps1: float = 1e-6
    m_window: int = 5
    max_iters: int = 20000

    def __post_init__(self):
        if not self.eps1 > 0.0:
            raise ValueError("eps1 must be positive")
        if self.m_window < 1:
            raise ValueError("m_window must be at least 1")
        if self.max_iters < self.m_window:
            raise ValueError("max_iters must be at least m_window")


@dataclass(frozen=True)
class OuterConfig:
    """Outer-layer policy.  ``eps2`` is the bound-gap target in bpcu; ``mu``
    is the gradient-ascent step in the rho^2 variable (None picks
    0.1 (A/K)^2 at initialization)."""

    eps2: float = 1e-2
    mu: float | None = None
    grid_points: int | None = None
    max_outer_iters: int = 3000
    max_shells: int = 64
    mu_floor_halvings: int = 60
    # Accepted steps grow the step size again (up to mu * 2^mu_growth_cap);
    # the backtracking halvings keep the ascent monotone either way.
    mu_growth: float = 2.0
    mu_growth_cap: int = 48

    def __post_init__(self):
        if not self.eps2 > 0.0:
            raise ValueError("eps2 must be positive")
        if self.mu is not None and not self.mu > 0.0:
            raise ValueError("mu must be positive")
        if not self.mu_growth >= 1.0:
            raise ValueError("mu_growth must be at least 1")


@dataclass
class SolverDiagnostics:
    outer_iters: int = 0
    inner_iters: int = 0
    insertions: int = 0
    backtracks: int = 0
    merges: int = 0
    prunes: int = 0
    max_inner_decrease: float = 0.0
    mu_final: float = math.nan
    stop_reason: str = ""
    lower_history: list = field(default_factory=list)
    upper_history: list = field(default_factory=list)


@dataclass(frozen=True)
class InnerResult:
    pmf: InputPmf
    lower_nats: float
    converged: bool
    n_iters: int
    max_decrease: float


@dataclass(frozen=True)
class CapacityResult:
    """Certified capacity bracket with the PMF achieving the lower bound."""

    lower_nats: float
    upper_nats: float
    pmf: InputPmf
    params: ChannelParams
    converged: bool
    diagnostics: SolverDiagnostics

    @property
    def lower_bpcu(self) -> float:
        return self.lower_nats / LN2

    @property
    def upper_bpcu(self) -> float:
        return self.upper_nats / LN2

    @property
    def gap_nats(self) -> float:
        return self.upper_nats - self.lower_nats


class _SolveGrid:
    """One shared quadrature grid per channel, resolving chi2_{2N} and
    chi2_{2N+2} for every noncentrality in [0, A^2]; reused across all radii
    configurations of a solve."""

    def __init__(self, params: ChannelParams, spec: QuadratureSpec, grid=None):
        self.params = params
        self.spec = spec
        if grid is None:
            k = 2 * params.n_dim
            lams = coverage_noncentralities(k, params.amplitude**2)
            weights = [Chi2Params(k, float(l)) for l in lams]
            weights += [Chi2Params(k + 2, float(l)) for l in lams]
            grid = build_grid(weights, spec)
        self.grid = grid
        self.nodes = self.grid.nodes
        self.w_kron = self.grid.w_kron
        self.logy = np.log(self.nodes)
        self.base = (params.n_dim - 1) * self.logy

    def pdf_rows(self, dof_offset: int, lams: np.ndarray) -> np.ndarray:
        k = 2 * self.params.n_dim + dof_offset
        return log_ncx2_pdf_grid(k, lams, self.nodes)

    def windowed_density_dot(self, rhos: np.ndarray, g: np.ndarray) -> np.ndarray:
        """``int f_{chi2_{2N}(rho^2)}(y) g(y) dy`` for sorted amplitudes, with the
        conditional pdf evaluated only where it carries mass."""
        k = 2 * self.params.n_dim
        out = np.empty(rhos.size)
        chunk = 128
        for s in range(0, rhos.size, chunk):
            block = rhos[s:s + chunk]
            lam_hi = float(block[-1] ** 2)
            lam_lo = float(block[0] ** 2)
            sigma_hi = math.sqrt(2.0 * (k + 2.0 * lam_hi))
            y_a = max(self.nodes[0], k + lam_lo - 14.0 * sigma_hi - 10.0)
            y_b = k + lam_hi + 14.0 * sigma_hi + 80.0
            i0, i1 = np.searchsorted(self.nodes, [y_a, y_b])
            i1 = min(i1 + 1, self.nodes.size)
            pdfs = np.exp(log_ncx2_pdf_grid(k, block**2, self.nodes[i0:i1]))
            out[s:s + chunk] = pdfs @ g[i0:i1]
        return out


class _ShellCache:
    """Pdf matrices of one radii set on the shared grid.

    The mixture log-density is a max-shifted log-sum-exp; the per-node shift
    and the shifted pdf matrix are precomputed once, so each inner iteration
    is two mat-vecs and one log."""

    def __init__(self, sg: _SolveGrid, radii: np.ndarray):
        self.sg = sg
        self.radii = np.asarray(radii, dtype=float)
        self.logf = sg.pdf_rows(0, self.radii**2)
        self._logf_plus = None
        self._finish()

    def _finish(self):
        self.shift = self.logf.max(axis=0)
        self.pdf_shifted = np.exp(self.logf - self.shift[None, :])
        self.pdf = np.exp(self.logf)

    @property
    def n_shells(self) -> int:
        return len(self.radii)

    @property
    def logf_plus(self) -> np.ndarray:
        if self._logf_plus is None:
            self._logf_plus = self.sg.pdf_rows(2, self.radii**2)
        return self._logf_plus

    def subset(self, keep: np.ndarray) -> "_ShellCache":
        out = object.__new__(_ShellCache)
        out.sg = self.sg
        out.radii = self.radii[keep]
        out.logf = self.logf[keep]
        out._logf_plus = None if self._logf_plus is None else self._logf_plus[keep]
        out._finish()
        return out

    def log_mixture(self, logp: np.ndarray) -> np.ndarray:
        return self.shift + np.log(np.exp(logp) @ self.pdf_shifted)

    def j_vector(self, logp: np.ndarray) -> np.ndarray:
        """J_i = int f_i ((N-1) log y - log f_mix) dy for every shell."""
        g = self.sg.w_kron * (self.sg.base - self.log_mixture(logp))
        return self.pdf @ g

    def gradient(self, logp: np.ndarray) -> np.ndarray:
        """dI/d(rho_i^2) with probabilities held fixed, for every shell."""
        core = self.sg.base - self.log_mixture(logp)
        out = np.empty(self.n_shells)
        pdf_plus = np.exp(self.logf_plus)
        for i in range(self.n_shells):
            g = self.sg.w_kron * (logp[i] + core)
            out[i] = 0.5 * math.exp(logp[i]) * ((pdf_plus[i] - self.pdf[i]) @ g)
        return out

    def scan_weights(self, logp: np.ndarray) -> np.ndarray:
        return self.sg.w_kron * (self.sg.base - self.log_mixture(logp))


def _inner_on_cache(cache: _ShellCache, probs: np.ndarray, cfg: InnerConfig) -> InnerResult:
    offset = capacity_offset(cache.sg.params)
    logp = np.log(probs)
    if cache.n_shells == 1:
        l_val = float(cache.j_vector(logp)[0])
        pmf = InputPmf.from_arrays(cache.radii, [1.0])
        return InnerResult(pmf, l_val - offset, True, 1, 0.0)

    history: deque[float] = deque(maxlen=cfg.m_window + 1)
    max_decrease = 0.0
    l_val = -math.inf
    converged = False
    q = 0
    while q < cfg.max_iters:
        q += 1
        j = cache.j_vector(logp)
        l_new = float(sc.logsumexp(logp + j))
        if l_val > -math.inf:
            max_decrease = max(max_decrease, l_val - l_new)
        l_val = l_new
        logp = logp + j - l_new
        history.append(l_new)
        if len(history) == cfg.m_window + 1:
            if max(abs(history[-1] - history[-1 - m]) for m in range(1, cfg.m_window + 1)) < cfg.eps1:
                converged = True
                break
    probs_out = np.exp(logp)
    keep = probs_out > 0.0
    pmf = InputPmf.from_arrays(cache.radii[keep], probs_out[keep])
    return InnerResult(pmf, l_val - offset, converged, q, max_decrease)


def inner_layer(pmf: InputPmf, params: ChannelParams,
                quad: QuadratureSpec | None = None,
                cfg: InnerConfig | None = None) -> InnerResult:
    """Optimize shell probabilities at fixed radii (Blahut-Arimoto variant).

    Returns the updated PMF and the certified capacity lower bound in nats;
    ``converged`` is False when the iteration cap was hit (the best iterate
    is still returned and its bound is still valid).
    """
    quad = quad if quad is not None else QuadratureSpec()
    cfg = cfg if cfg is not None else InnerConfig()
    k = 2 * params.n_dim
    weights = [Chi2Params(k, float(r * r)) for r in pmf.radii]
    sg = _SolveGrid(params, quad, grid=build_grid(weights, quad))
    cache = _ShellCache(sg, pmf.radii_array)
    return _inner_on_cache(cache, pmf.probs_array, cfg)


def mi_gradient(pmf: InputPmf, params: ChannelParams,
                quad: QuadratureSpec | None = None, shell_index: int = 0) -> float:
    """Derivative of the mutual information in rho_i^2 at fixed probabilities.

    ``int (p_i/2) (f_{2N+2}(y) - f_{2N}(y)) (log p_i + (N-1) log y - log f_mix(y)) dy``
    evaluated adaptively.  Moving the outermost shell (pinned at A by the
    outer layer) is the caller's responsibility to rule out.
    """
    quad = quad if quad is not None else QuadratureSpec()
    from .model import output_log_density

    i = shell_index
    rho = pmf.radii[i]
    p_i = pmf.probs[i]
    n = params.n_dim
    lam = rho * rho

    def g(y):
        return math.log(p_i) + (n - 1) * np.log(y) - output_log_density(pmf, params, y)

    hi = integrate_weighted(g, Chi2Params(2 * n + 2, lam), quad)
    lo = integrate_weighted(g, Chi2Params(2 * n, lam), quad)
    return 0.5 * p_i * (hi - lo)


@dataclass
class _OuterState:
    pmf: InputPmf
    cache: _ShellCache
    lower: float


def _golden_max(f, lo: float, hi: float, n_iters: int = 40) -> tuple[float, float]:
    """Golden-section maximization of a scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n_iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def outer_layer(params: ChannelParams,
                quad: QuadratureSpec | None = None,
                inner_cfg: InnerConfig | None = None,
                outer_cfg: OuterConfig | None = None,
                init_pmf: InputPmf | None = None) -> CapacityResult:
    """Full capacity solver: shell insertion, probability updates, radii ascent.

    Self-initializing: the starting PMF has the guaranteed minimum number of
    shells, evenly spaced radii in [0, A] and uniform probabilities.  The
    outermost radius stays pinned at A throughout.  ``init_pmf`` overrides
    the start (radii are clipped to [0, A]; the largest is pinned to A) for
    warm starts across an SNR sweep.
    """
    quad = quad if quad is not None else QuadratureSpec()
    inner_cfg = inner_cfg if inner_cfg is not None else InnerConfig()
    outer_cfg = outer_cfg if outer_cfg is not None else OuterConfig()

    a = params.amplitude
    offset = capacity_offset(params)
    eps2_nats = outer_cfg.eps2 * LN2
    merge_tol = MERGE_TOL_FACTOR * a
    diag = SolverDiagnostics()
    sg = _SolveGrid(params, quad)

    if init_pmf is None:
        k0 = kappa_lower_bound(params)
        radii = np.array([a]) if k0 == 1 else np.linspace(a, 0.0, k0)
        probs = np.full(len(radii), 1.0 / len(radii))
    else:
        radii = np.clip(init_pmf.radii_array, 0.0, a)
        radii[0] = a
        probs = init_pmf.probs_array
    start = InputPmf.from_arrays(radii, probs, merge_tol)

    mu0 = outer_cfg.mu if outer_cfg.mu is not None else 0.1 * (a / start.k) ** 2
    mu = mu0

    def optimize(radii_arr, probs_arr) -> _OuterState:
        pmf0 = InputPmf.from_arrays(radii_arr, probs_arr, merge_tol)
        if pmf0.k < len(radii_arr):
            diag.merges += len(radii_arr) - pmf0.k
        cache = _ShellCache(sg, pmf0.radii_array)
        inner = _inner_on_cache(cache, pmf0.probs_array, inner_cfg)
        diag.inner_iters += inner.n_iters
        diag.max_inner_decrease = max(diag.max_inner_decrease, inner.max_decrease)
        pmf = inner.pmf
        lower = inner.lower_nats
        if pmf.k < cache.n_shells:
            diag.prunes += cache.n_shells - pmf.k
            cache = cache.subset(np.isin(cache.radii, pmf.radii_array))
        pruned = pmf.pruned(PRUNE_THRESHOLD)
        if pruned.k < pmf.k:
            diag.prunes += pmf.k - pruned.k
            cache = cache.subset(np.isin(cache.radii, pruned.radii_array))
            pmf = pruned
            logp = np.log(pmf.probs_array)
            lower = float(pmf.probs_array @ cache.j_vector(logp)) - offset
        return _OuterState(pmf=pmf, cache=cache, lower=lower)

    def upper_bound(state: _OuterState, full: bool = True) -> tuple[float, float]:
        """(max_rho i(rho) over (0, A], i(0)) in nats.

        ``full=False`` runs a coarse scan without golden refinement; it
        underestimates the maximum and is only used as a trigger, never as a
        certified bound."""
        logp = np.log(state.pmf.probs_array)
        g = state.cache.scan_weights(logp)
        if full:
            gp = outer_cfg.grid_points if outer_cfg.grid_points is not None \
                else max(512, 64 * state.pmf.k)
        else:
            gp = max(128, 8 * state.pmf.k)
        rhos = np.unique(np.concatenate([
            np.linspace(a / gp, a, gp),
            state.pmf.radii_array[state.pmf.radii_array > 0.0],
        ]))
        vals = sg.windowed_density_dot(rhos, g)
        best = int(np.argmax(vals))
        peak = float(vals[best])
        if full:
            lo = rhos[max(0, best - 1)]
            hi = rhos[min(len(rhos) - 1, best + 1)]

            def f(r):
                return float(sg.windowed_density_dot(np.array([r]), g)[0])

            _, refined = _golden_max(f, lo, hi)
            peak = max(peak, refined)
        i_zero = float(sg.windowed_density_dot(np.array([0.0]), g)[0])
        return peak - offset, i_zero - offset

    state = optimize(start.radii_array, start.probs_array)
    upper = math.inf
    converged = False

    while diag.outer_iters < outer_cfg.max_outer_iters:
        diag.outer_iters += 1
        # Coarse scan as a trigger; anything recorded or acted on is
        # confirmed at full resolution.
        ub_coarse, i_zero = upper_bound(state, full=False)
        if (ub_coarse - state.lower < 4.0 * eps2_nats or i_zero >= ub_coarse
                or diag.outer_iters % 10 == 1):
            upper, i_zero = upper_bound(state, full=True)
            if (i_zero >= upper and state.pmf.radii[-1] > merge_tol
                    and state.pmf.k < outer_cfg.max_shells):
                new_radii = np.append(state.pmf.radii_array, 0.0)
                new_probs = np.full(len(new_radii), 1.0 / len(new_radii))
                state = optimize(new_radii, new_probs)
                diag.insertions += 1
                upper, i_zero = upper_bound(state, full=True)
            diag.lower_history.append(state.lower)
            diag.upper_history.append(upper)
            if upper - state.lower < eps2_nats:
                converged = True
                diag.stop_reason = "converged"
                break
        if state.pmf.k == 1:
            # No movable radius and no insertion: nothing can improve.
            diag.stop_reason = "stalled_single_shell"
            break
        grads = state.cache.gradient(np.log(state.pmf.probs_array))

        def try_step(step: float) -> _OuterState:
            lam_new = state.pmf.radii_array**2
            lam_new[1:] = np.clip(lam_new[1:] + step * grads[1:], 0.0, a * a)
            return optimize(np.sqrt(lam_new), state.pmf.probs_array)

        accepted = None
        while mu >= mu0 * 0.5**outer_cfg.mu_floor_halvings:
            cand = try_step(mu)
            if cand.lower >= state.lower - inner_cfg.eps1:
                accepted = cand
                break
            diag.backtracks += 1
            mu *= 0.5
        if accepted is None:
            diag.stop_reason = "step_collapse"
            break
        # Expand the step while it keeps strictly improving the bound.
        while mu < mu0 * 2.0**outer_cfg.mu_growth_cap:
            cand = try_step(mu * outer_cfg.mu_growth)
            if cand.lower > accepted.lower + inner_cfg.eps1:
                mu *= outer_cfg.mu_growth
                accepted = cand
            else:
                break
        state = accepted
    else:
        diag.stop_reason = "max_iters"

    diag.mu_final = mu
    if not converged:
        # Certify the final state and report the best upper bound seen (every
        # full-scan value is valid on its own).
        final_ub, _ = upper_bound(state, full=True)
        diag.lower_history.append(state.lower)
        diag.upper_history.append(final_ub)
        upper = min(diag.upper_history)
    log.info("outer layer: %s after %d iterations, gap %.3e nats",
             diag.stop_reason, diag.outer_iters, upper - state.lower)
    return CapacityResult(
        lower_nats=state.lower,
        upper_nats=upper,
        pmf=state.pmf,
        params=params,
        converged=converged,
        diagnostics=diag,
    )

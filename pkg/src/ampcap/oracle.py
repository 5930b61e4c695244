"""Monte-Carlo estimators used only to verify the quadrature pipeline.

Everything here simulates the channel directly: draw a shell radius from the
PMF, add the complex Gaussian noise coordinate-wise, and work with the
squared output norm.  Nothing is shared with the quadrature-based code paths
except the mixture density being evaluated at the sampled points.

Batches use independent Philox streams keyed by (seed, batch index), so the
estimates are bit-identical no matter how many workers consume the batches
or in which order they finish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ChannelParams,
    InputPmf,
    capacity_offset,
    mixture_cdf,
    output_log_density,
)
from .quadrature import QuadratureSpec, truncation_window
from .specfun import Chi2Params

__all__ = [
    "McConfig",
    "HistogramCheck",
    "mc_mutual_information",
    "mc_output_histogram",
]


@dataclass(frozen=True)
class McConfig:
    """Sampling budget and determinism policy for the Monte-Carlo oracles."""

    n_samples: int = 1_000_000
    rng_seed: int = 0
    batch: int = 1 << 16

    def __post_init__(self):
        if self.n_samples < 10_000:
            raise ValueError("n_samples must be at least 10^4")
        if self.batch < 1:
            raise ValueError("batch must be positive")


def _batch_rng(cfg: McConfig, index: int) -> np.random.Generator:
    key = np.array([cfg.rng_seed & 0xFFFFFFFFFFFFFFFF, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _sample_output_sq(pmf: InputPmf, params: ChannelParams,
                      rng: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw m samples of (rho, |Y|^2): rho from the PMF, then
    |Y|^2 = |rho + W_1|^2 + sum_{i>=2} |W_i|^2 with unit-variance normal parts."""
    n = params.n_dim
    idx = rng.choice(pmf.k, size=m, p=pmf.probs_array)
    rho = pmf.radii_array[idx]
    g = rng.standard_normal((m, 2 * n))
    g[:, 0] += rho
    return rho, np.einsum("ij,ij->i", g, g)


def mc_mutual_information(pmf: InputPmf, params: ChannelParams,
                          cfg: McConfig | None = None) -> tuple[float, float]:
    """Monte-Carlo estimate of the mutual information achieved by ``pmf`` (nats).

    Averages ``(N-1) log |Y|^2 - log f_mix(|Y|^2)`` over simulated outputs and
    subtracts the capacity offset, which estimates ``ell(F) - offset`` without
    any quadrature.  Returns (estimate, standard error).
    """
    cfg = cfg if cfg is not None else McConfig()
    total = 0.0
    total_sq = 0.0
    n_done = 0
    b = 0
    n_dim = params.n_dim
    while n_done < cfg.n_samples:
        m = min(cfg.batch, cfg.n_samples - n_done)
        rng = _batch_rng(cfg, b)
        _, y = _sample_output_sq(pmf, params, rng, m)
        t = (n_dim - 1) * np.log(y) - output_log_density(pmf, params, y)
        total += float(t.sum())
        total_sq += float((t * t).sum())
        n_done += m
        b += 1
    mean = total / n_done
    var = max(total_sq / n_done - mean * mean, 0.0) * n_done / (n_done - 1)
    std_err = math.sqrt(var / n_done)
    return mean - capacity_offset(params), std_err


@dataclass(frozen=True)
class HistogramCheck:
    """Binned comparison of simulated |Y|^2 against the mixture density."""

    edges: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    n_samples: int

    @property
    def max_sigma_deviation(self) -> float:
        """Largest |observed - expected| / sqrt(expected) over bins with
        expected count >= 10."""
        mask = self.expected >= 10.0
        dev = np.abs(self.counts[mask] - self.expected[mask]) / np.sqrt(self.expected[mask])
        return float(dev.max()) if mask.any() else 0.0


def mc_output_histogram(pmf: InputPmf, params: ChannelParams,
                        cfg: McConfig | None = None, n_bins: int = 40,
                        spec: QuadratureSpec | None = None) -> HistogramCheck:
    """Histogram of simulated |Y|^2 with expected counts from the mixture CDF.

    The first and last bins cover the mass outside the truncation window, so
    their expected counts are at most ``tail_mass * n_samples`` by
    construction.
    """
    cfg = cfg if cfg is not None else McConfig()
    spec = spec if spec is not None else QuadratureSpec()
    k = 2 * params.n_dim
    windows = [truncation_window(Chi2Params(k, float(r * r)), spec.tail_mass)
               for r in pmf.radii]
    y_lo = min(w[0] for w in windows)
    y_hi = max(w[1] for w in windows)
    inner = np.linspace(y_lo, y_hi, n_bins + 1)
    edges = np.concatenate([[0.0], inner, [np.inf]])

    counts = np.zeros(len(edges) - 1)
    n_done = 0
    b = 0
    while n_done < cfg.n_samples:
        m = min(cfg.batch, cfg.n_samples - n_done)
        rng = _batch_rng(cfg, b)
        _, y = _sample_output_sq(pmf, params, rng, m)
        counts += np.histogram(y, bins=edges)[0]
        n_done += m
        b += 1

    cdf_vals = np.concatenate([[0.0], mixture_cdf(pmf, params, edges[1:-1]), [1.0]])
    expected = np.diff(cdf_vals) * n_done
    return HistogramCheck(edges=edges, counts=counts, expected=expected, n_samples=n_done)

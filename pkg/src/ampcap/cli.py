"""Command-line front end: SNR sweeps, CSV/JSON serialization, PMF dumps.

All external values are in bpcu; nats never leave the library.  Exit codes:
0 when every sweep point converged, 2 when any point failed to converge
(records are still written, flagged), 1 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import (
    InputPmf,
    LN2,
    capacity_offset,
    ell_functional,
    kappa_lower_bound,
    params_from_snr,
    shell_surface_measure,
)
from .oracle import McConfig, mc_mutual_information
from .quadrature import QuadratureSpec
from .solver import CapacityResult, InnerConfig, OuterConfig, outer_layer

__all__ = ["SweepConfig", "SweepRecord", "run_sweep", "dump_pmf", "main"]

log = logging.getLogger(__name__)

CSV_FIELDS = [
    "snr_db", "amplitude", "lower_bpcu", "upper_bpcu", "k_hat", "k_lower",
    "radii_norm", "probs", "converged", "wall_time_s",
]


@dataclass(frozen=True)
class SweepConfig:
    """One documented key per CLI flag; flags override file values override
    these defaults."""

    dim: int = 2
    snr_db: str = ""
    eps1: float = 1e-6
    eps2: float = 1e-2
    mu: float | None = None
    m_window: int = 5
    max_inner: int = 20000
    max_outer: int = 3000
    grid_points: int | None = None
    tail_mass: float = 1e-12
    abs_tol: float = 1e-9
    seed: int = 0
    out: str = "sweep"
    format: str = "both"
    warm_start: str = "on"
    threads: int = 1
    mc_check: bool = False
    dump_pmf: bool = False

    def snr_points(self) -> list[float]:
        spec = self.snr_db.strip()
        if not spec:
            raise ValueError("no SNR points given (--snr-db)")
        if ":" in spec:
            parts = spec.split(":")
            if len(parts) != 3:
                raise ValueError(f"bad SNR range {spec!r}, expected lo:hi:count")
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
            if count < 1:
                raise ValueError("SNR range count must be >= 1")
            return [float(x) for x in np.linspace(lo, hi, count)]
        return [float(tok) for tok in spec.split(",") if tok.strip()]

    def quad(self) -> QuadratureSpec:
        return QuadratureSpec(abs_tol=self.abs_tol, tail_mass=self.tail_mass)

    def inner_cfg(self) -> InnerConfig:
        return InnerConfig(eps1=self.eps1, m_window=self.m_window, max_iters=self.max_inner)

    def outer_cfg(self) -> OuterConfig:
        return OuterConfig(eps2=self.eps2, mu=self.mu, grid_points=self.grid_points,
                           max_outer_iters=self.max_outer)


@dataclass(frozen=True)
class SweepRecord:
    """One solved SNR point, as serialized to CSV/JSON."""

    snr_db: float
    amplitude: float
    lower_bpcu: float
    upper_bpcu: float
    k_hat: int
    k_lower: int
    radii_norm: tuple[float, ...]
    probs: tuple[float, ...]
    converged: bool
    wall_time_s: float
    pmf_rows: tuple[dict, ...] = field(default=())
    mc_check: dict | None = None

    def csv_row(self) -> list[str]:
        return [
            repr(self.snr_db), repr(self.amplitude),
            repr(self.lower_bpcu), repr(self.upper_bpcu),
            str(self.k_hat), str(self.k_lower),
            ";".join(repr(x) for x in self.radii_norm),
            ";".join(repr(x) for x in self.probs),
            "true" if self.converged else "false",
            f"{self.wall_time_s:.3f}",
        ]

    def json_obj(self) -> dict:
        obj = {
            "snr_db": self.snr_db,
            "amplitude": self.amplitude,
            "lower_bpcu": self.lower_bpcu,
            "upper_bpcu": self.upper_bpcu,
            "k_hat": self.k_hat,
            "k_lower": self.k_lower,
            "pmf": list(self.pmf_rows),
            "converged": self.converged,
            "wall_time_s": self.wall_time_s,
        }
        if self.mc_check is not None:
            obj["mc_check"] = self.mc_check
        return obj


def _pmf_rows(result: CapacityResult) -> tuple[dict, ...]:
    a = result.params.amplitude
    n = result.params.n_dim
    rows = []
    for rho, p in zip(result.pmf.radii, result.pmf.probs):
        s = shell_surface_measure(n, rho)
        rows.append({
            "rho": rho,
            "rho_norm": rho / a,
            "p": p,
            "p_over_S": p / s if s > 0.0 else None,
        })
    return tuple(rows)


def _record_from_result(snr_db: float, result: CapacityResult, wall: float,
                        mc: dict | None = None) -> SweepRecord:
    params = result.params
    return SweepRecord(
        snr_db=snr_db,
        amplitude=params.amplitude,
        lower_bpcu=result.lower_bpcu,
        upper_bpcu=result.upper_bpcu,
        k_hat=result.pmf.k,
        k_lower=kappa_lower_bound(params),
        radii_norm=tuple(r / params.amplitude for r in result.pmf.radii),
        probs=result.pmf.probs,
        converged=result.converged,
        wall_time_s=wall,
        pmf_rows=_pmf_rows(result),
        mc_check=mc,
    )


def _solve_point(cfg: SweepConfig, snr_db: float,
                 init_pmf: InputPmf | None = None) -> tuple[SweepRecord, CapacityResult]:
    params = params_from_snr(cfg.dim, snr_db)
    t0 = time.perf_counter()
    result = outer_layer(params, cfg.quad(), cfg.inner_cfg(), cfg.outer_cfg(),
                         init_pmf=init_pmf)
    wall = time.perf_counter() - t0
    mc = None
    if cfg.mc_check:
        est, se = mc_mutual_information(result.pmf, params,
                                        McConfig(n_samples=1_000_000, rng_seed=cfg.seed))
        quad_nats = ell_functional(result.pmf, params, cfg.quad()) - capacity_offset(params)
        mc = {
            "estimate_bpcu": est / LN2,
            "std_error_bpcu": se / LN2,
            "quadrature_bpcu": quad_nats / LN2,
            "sigmas": abs(est - quad_nats) / se if se > 0 else 0.0,
        }
        log.info("mc check @%.3f dB: %.4f bpcu vs quadrature %.4f (%.2f sigma)",
                 snr_db, est / LN2, quad_nats / LN2, mc["sigmas"])
    return _record_from_result(snr_db, result, wall, mc), result


def _solve_point_star(args) -> tuple[SweepRecord, CapacityResult]:
    return _solve_point(*args)


def run_sweep(cfg: SweepConfig) -> tuple[list[SweepRecord], int]:
    """Solve every SNR point, write the output files, and return (records, exit code)."""
    snrs = sorted(cfg.snr_points())
    records: list[SweepRecord] = []
    if cfg.warm_start == "on" or cfg.threads <= 1:
        prev: CapacityResult | None = None
        for snr in snrs:
            init = None
            if cfg.warm_start == "on" and prev is not None:
                a_new = params_from_snr(cfg.dim, snr).amplitude
                init = InputPmf.from_arrays(
                    np.asarray(prev.pmf.radii) / prev.params.amplitude * a_new,
                    prev.pmf.probs)
            rec, result = _solve_point(cfg, snr, init)
            records.append(rec)
            prev = result
            log.info("snr %.3f dB: [%.4f, %.4f] bpcu, K=%d, %s",
                     snr, rec.lower_bpcu, rec.upper_bpcu, rec.k_hat,
                     "converged" if rec.converged else "NOT CONVERGED")
    else:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            for rec, _ in pool.map(_solve_point_star, [(cfg, s) for s in snrs]):
                records.append(rec)
    records.sort(key=lambda r: r.snr_db)

    if cfg.format in ("csv", "both"):
        _write_csv(records, cfg.out + ".csv")
    if cfg.format in ("json", "both"):
        _write_json(records, cfg, cfg.out + ".json")
    if cfg.dump_pmf:
        for rec in records:
            fmt = "json" if cfg.format == "json" else "csv"
            dump_pmf(rec, fmt, f"{cfg.out}_pmf_{rec.snr_db:+.3f}dB.{fmt}")
    return records, (0 if all(r.converged for r in records) else 2)


def _write_csv(records: list[SweepRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for rec in records:
            writer.writerow(rec.csv_row())


def _write_json(records: list[SweepRecord], cfg: SweepConfig, path: str) -> None:
    payload = {
        "config": dataclasses.asdict(cfg),
        "records": [rec.json_obj() for rec in records],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def dump_pmf(record: SweepRecord, fmt: str, path: str) -> None:
    """Write the (rho/A, p, p/S) triples of one converged point, radius descending."""
    rows = sorted(record.pmf_rows, key=lambda r: -r["rho"])
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump([{k: r[k] for k in ("rho_norm", "p", "p_over_S")} for r in rows],
                      fh, indent=1)
            fh.write("\n")
    else:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rho_norm", "p", "p_over_S"])
            for r in rows:
                writer.writerow([repr(r["rho_norm"]), repr(r["p"]),
                                 "" if r["p_over_S"] is None else repr(r["p_over_S"])])


def run_selftest() -> int:
    """Quick invariant battery; prints one PASS/FAIL line per check."""
    import math

    from scipy import special as ss

    from .model import ChannelParams
    from .quadrature import integrate_weighted, truncation_window
    from .solver import inner_layer
    from .specfun import Chi2Params, amos_upper_bound, bessel_ratio, log_ncx2_pdf, ncx2_cdf

    checks: list[tuple[str, bool]] = []

    ok = True
    for k, lam in [(2, 0.0), (4, 10.0), (6, 1000.0)]:
        w = Chi2Params(k, lam)
        norm = integrate_weighted(lambda y: np.ones_like(y), w)
        mean = integrate_weighted(lambda y: y, w)
        ok &= abs(norm - 1.0) < 1e-8 and abs(mean - (k + lam)) < 1e-6 * (k + lam)
    checks.append(("chi2 normalization and mean", ok))

    ok = True
    for k, lam, y in [(4, 3.0, 5.0), (6, 50.0, 40.0)]:
        w = Chi2Params(k, lam)
        h = 1e-5 * y
        dnum = (ncx2_cdf(w, y + h) - ncx2_cdf(w, y - h)) / (2 * h)
        ok &= abs(dnum - math.exp(log_ncx2_pdf(w, y))) < 1e-6
    checks.append(("cdf/pdf derivative consistency", ok))

    zs = np.linspace(0.2, 800.0, 64)
    ok = True
    for nu in (1.0, 2.0, 3.0):
        res = 1.0 / bessel_ratio(nu, zs) - bessel_ratio(nu + 1.0, zs) - 2.0 * nu / zs
        ok &= float(np.abs(res).max()) < 1e-10
    checks.append(("bessel three-term recurrence", ok))

    rng = np.random.default_rng(0)
    ok = True
    for nu, z in zip(rng.uniform(1.0, 8.0, 50), rng.uniform(0.0, 1e3, 50)):
        ok &= bessel_ratio(nu, z) <= amos_upper_bound(nu - 1.0, z) + 1e-14
    checks.append(("amos bound dominance", ok))

    t = np.logspace(-2, 3, 200)
    ok = True
    for n in (1, 2, 3, 4):
        if n == 1:
            s = bessel_ratio(0.0, t) / t
        else:
            s = bessel_ratio(float(n - 1), t) / t
        ok &= bool(np.all(np.diff(s) < 0.0))
    checks.append(("s_{N-1} monotone decreasing", ok))

    w = Chi2Params(4, 100.0)
    lo, hi = truncation_window(w, 1e-12)
    checks.append(("truncation window brackets", lo < w.mean < hi
                   and ncx2_cdf(w, lo) <= 5e-13 and 1 - ncx2_cdf(w, hi) <= 5e-13))

    params = params_from_snr(2, -5.0)
    res = inner_layer(InputPmf.single_shell(params.amplitude), params)
    checks.append(("inner layer single shell @-5dB",
                   abs(res.lower_nats / LN2 - 0.7919) < 2e-3))

    failed = 0
    for name, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
        failed += 0 if passed else 1
    print(f"{len(checks) - failed}/{len(checks)} selftest checks passed")
    return 0 if failed == 0 else 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="ampcap",
                description="Capacity of the peak-amplitude-limited N x N complex "
                            "AWGN channel: certified bounds and the optimal "
                            "amplitude distribution, swept over SNR.")
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.add_argument("--dim", type=int, help="complex dimensions N (default 2)")
    p.add_argument("--snr-db", help="SNR point, comma list, or lo:hi:count range")
    p.add_argument("--eps1", type=float, help="inner-layer tolerance in nats (default 1e-6)")
    p.add_argument("--eps2", type=float, help="bound-gap target in bpcu (default 1e-2)")
    p.add_argument("--mu", type=float, help="initial gradient step in rho^2")
    p.add_argument("--m-window", type=int, help="inner convergence window (default 5)")
    p.add_argument("--max-inner", type=int, help="inner iteration cap")
    p.add_argument("--max-outer", type=int, help="outer iteration cap")
    p.add_argument("--grid-points", type=int, help="upper-bound scan resolution")
    p.add_argument("--tail-mass", type=float, help="chi2 mass left outside windows")
    p.add_argument("--abs-tol", type=float, help="quadrature absolute tolerance")
    p.add_argument("--seed", type=int, help="RNG seed for --mc-check")
    p.add_argument("--out", help="output path prefix (default 'sweep')")
    p.add_argument("--format", choices=["csv", "json", "both"], help="output format")
    p.add_argument("--warm-start", choices=["on", "off"],
                   help="reuse previous SNR point's radii (default on)")
    p.add_argument("--threads", type=int,
                   help="worker processes for independent points (warm-start off)")
    p.add_argument("--mc-check", action="store_true", default=None,
                   help="cross-validate each point with the Monte-Carlo oracle")
    p.add_argument("--dump-pmf", action="store_true", default=None,
                   help="write a per-point PMF file (rho/A, p, p/S)")
    p.add_argument("--selftest", action="store_true",
                   help="run the quick property suite and exit")
    return p


def _merge_config(ns: argparse.Namespace) -> SweepConfig:
    file_vals: dict = {}
    if ns.config:
        with open(ns.config) as fh:
            file_vals = json.load(fh)
        unknown = set(file_vals) - {f.name for f in dataclasses.fields(SweepConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    merged = {}
    for f in dataclasses.fields(SweepConfig):
        flag_val = getattr(ns, f.name, None)
        if flag_val is not None:
            merged[f.name] = flag_val
        elif f.name in file_vals:
            merged[f.name] = file_vals[f.name]
    return SweepConfig(**merged)


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("AMPCAP_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if ns.selftest:
        return run_selftest()
    try:
        cfg = _merge_config(ns)
        snrs = cfg.snr_points()
        if cfg.dim < 1:
            raise ValueError("dim must be >= 1")
        cfg.quad()
        cfg.inner_cfg()
        cfg.outer_cfg()
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    log.info("sweeping %d SNR points: %s", len(snrs), snrs)
    try:
        _, code = run_sweep(cfg)
    except Exception as exc:  # solver/quadrature failures are reported, not raised
        sys.stderr.write(f"error: {exc}\n")
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Max and proportional-fair NDS allocations, analytic and simulated.

The empirical path sweeps the NDS Poisson rate over a grid, simulating the
link at each point with the DS stream held fixed (common random numbers),
and reads the allocations off the measured mean DS delays.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import analytics as qa
from .analytics import GainCurve, LinkLoad, ServiceModel
from .errors import InvalidArgumentError, OutOfRegionError, SimulationAbort, SweepError
from .sim import DS, SimConfig, nearest_rank, run
from .traffic import Deterministic, Exponential, Poisson, mean_size_bits

log = logging.getLogger(__name__)


class GridTooShortError(SweepError):
    """The sweep grid never crosses the LLR boundary (or has too few points)."""


@dataclass(frozen=True)
class SweepConfig:
    """NDS rate grid (packets/s) and the per-point simulation budget."""

    stop: float
    start: float = 0.0
    step: Optional[float] = None
    points: Optional[int] = None
    packets_per_point: Optional[int] = 1_000_000
    time_per_point: Optional[float] = None
    seed_stride: int = 1
    workers: int = 1

    def grid(self) -> np.ndarray:
        if self.step is not None:
            if not self.step > 0:
                raise SweepError("sweep step must be > 0")
            n = int(math.floor((self.stop - self.start) / self.step + 1e-9))
            g = self.start + self.step * np.arange(n + 1)
        elif self.points is not None:
            g = np.linspace(self.start, self.stop, self.points)
        else:
            raise SweepError("sweep needs a step or a point count")
        if len(g) < 5:
            raise GridTooShortError(f"sweep grid has {len(g)} points; need at least 5")
        if self.start < 0 or np.any(np.diff(g) <= 0):
            raise SweepError("sweep grid must start at >= 0 and increase")
        return g


@dataclass
class SweepPoint:
    lambda_b: float  # nominal NDS rate
    nds_rate: float  # measured NDS throughput, packets/s
    ds_rate: float  # 1 / measured mean DS inter-arrival time
    ds_mean_iat: float
    mean_delay: float  # DS, seconds
    mean_delay_se: float
    p50: float
    p90: float
    p99: float
    n_samples: int
    stable: bool = True


def _point_config(base: SimConfig, sweep: SweepConfig, k: int, lambda_b: float) -> SimConfig:
    nds = Poisson(lambda_b) if lambda_b > 0 else None
    cfg = base.with_nds(nds, nds_seed=base.seed + sweep.seed_stride * (k + 1))
    over = {}
    if sweep.packets_per_point is not None or sweep.time_per_point is not None:
        over = {"max_packets": sweep.packets_per_point, "max_time": sweep.time_per_point}
    return cfg.replace(**over) if over else cfg


def _measure(args) -> SweepPoint:
    cfg, lambda_b = args
    try:
        res = run(cfg)
    except SimulationAbort:
        nan = math.nan
        return SweepPoint(lambda_b, nan, nan, nan, math.inf, nan, math.inf, math.inf, math.inf, 0, False)
    d = np.sort(res.ds.delays)
    return SweepPoint(
        lambda_b=float(lambda_b),
        nds_rate=res.throughput("NDS"),
        ds_rate=1.0 / res.ds.mean_iat,
        ds_mean_iat=res.ds.mean_iat,
        mean_delay=float(np.mean(d)),
        mean_delay_se=res.mean_delay_se(DS),
        p50=nearest_rank(d, 0.5),
        p90=nearest_rank(d, 0.9),
        p99=nearest_rank(d, 0.99),
        n_samples=len(d),
    )


def run_sweep(base: SimConfig, sweep: SweepConfig) -> List[SweepPoint]:
    """Simulate every grid point; DS stream shared, NDS seeds offset per point."""
    if base.nds_sizes is None:
        raise InvalidArgumentError("sweep base config needs an NDS size model")
    grid = sweep.grid()
    jobs = [(_point_config(base, sweep, k, float(lb)), float(lb)) for k, lb in enumerate(grid)]
    if sweep.workers > 1:
        with ProcessPoolExecutor(sweep.workers) as ex:
            return list(ex.map(_measure, jobs))
    return [_measure(j) for j in jobs]


def _crossing(points: Sequence[SweepPoint]) -> Tuple[float, int]:
    """Interpolated NDS rate where mean DS delay meets the DS mean gap."""
    h = np.array([p.mean_delay - p.ds_mean_iat if p.stable else math.inf for p in points])
    if h[0] > 0:
        raise OutOfRegionError(
            f"DS flow outside the LLR with no NDS traffic: mean delay "
            f"{points[0].mean_delay:.6g} s > mean gap {points[0].ds_mean_iat:.6g} s")
    over = np.nonzero(h > 0)[0]
    if len(over) == 0:
        raise GridTooShortError("LLR boundary not crossed on the sweep grid; extend stop")
    k = int(over[0])
    x0, x1 = points[k - 1].lambda_b, points[k].lambda_b
    if not math.isfinite(h[k]):
        return x0, k
    return x0 + (x1 - x0) * (-h[k - 1]) / (h[k] - h[k - 1]), k


def empirical_max_alloc(base: SimConfig, sweep: SweepConfig,
                        points: Optional[Sequence[SweepPoint]] = None) -> float:
    """Largest NDS rate whose measured mean DS delay stays within the DS mean gap."""
    if points is None:
        points = run_sweep(base, sweep)
    return _crossing(points)[0]


def refine_argmax(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Discrete argmax refined by the vertex of the parabola through its neighbours."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = int(np.argmax(y))
    if k == 0 or k == len(y) - 1:
        return float(x[k]), float(y[k])
    (x0, x1, x2), (y0, y1, y2) = x[k - 1:k + 2], y[k - 1:k + 2]
    d01 = (y1 - y0) / (x1 - x0)
    d12 = (y2 - y1) / (x2 - x1)
    a = (d12 - d01) / (x2 - x0)
    if a >= 0:
        return float(x1), float(y1)
    b = d01 - a * (x0 + x1)
    xv = min(max(-b / (2 * a), x0), x2)
    yv = y1 + (xv - x1) * (d01 + a * (xv - x0))
    return float(xv), float(yv)


@dataclass
class AllocationReport:
    lambda_s: float
    empirical_max: float
    empirical_pfll: float
    g_curve: GainCurve
    f_curve: GainCurve
    delay_curve: np.ndarray  # mean DS delay on the curve grid
    delay_at_zero: float
    delay_at_pfll: float
    delay_at_max: float
    argmax_g: float
    noise_tolerance: float  # seconds; 2x the largest standard error in the sweep
    analytic_max: Optional[float] = None
    analytic_pfll: Optional[float] = None
    nds_mean_size_bits: Optional[float] = None
    points: List[SweepPoint] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    reference: dict = field(default_factory=dict)

    def normalized(self, which: str) -> np.ndarray:
        curve = self.g_curve if which == "g" else self.f_curve
        try:
            return qa.normalize_curve(curve).values
        except qa.DegenerateCurveError:
            return np.full(len(curve.values), math.nan)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        out = {
            "lambda_s": self.lambda_s,
            "analytic_max": self.analytic_max,
            "analytic_pfll": self.analytic_pfll,
            "empirical_max": self.empirical_max,
            "empirical_pfll": self.empirical_pfll,
            "argmax_g": self.argmax_g,
            "delay_at_zero": self.delay_at_zero,
            "delay_at_pfll": self.delay_at_pfll,
            "delay_at_max": self.delay_at_max,
            "noise_tolerance": self.noise_tolerance,
            "nds_mean_size_bits": self.nds_mean_size_bits,
            "curves": {
                "lambda_b": self.g_curve.lambda_b_grid.tolist(),
                "g": self.g_curve.values.tolist(),
                "f": self.f_curve.values.tolist(),
                "g_hat": self.normalized("g").tolist(),
                "f_hat": self.normalized("f").tolist(),
                "mean_delay_s": self.delay_curve.tolist(),
            },
            "points": [asdict(p) for p in self.points],
            "warnings": list(self.warnings),
            "reference": dict(self.reference),
        }
        if self.nds_mean_size_bits:
            b = self.nds_mean_size_bits
            out["bits_per_second"] = {
                "empirical_max": self.empirical_max * b,
                "empirical_pfll": self.empirical_pfll * b,
            }
        return {k: clean(v) for k, v in out.items()}

    def write_json(self, dest: Union[str, IO]) -> None:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"
        if isinstance(dest, str):
            with open(dest, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        else:
            dest.write(text)

    def write_curves(self, dest: Union[str, IO]) -> None:
        def _emit(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda_b", "g_hat", "f_hat", "mean_delay_s"])
            for row in zip(self.g_curve.lambda_b_grid, self.normalized("g"),
                           self.normalized("f"), self.delay_curve):
                w.writerow([repr(float(v)) for v in row])

        if isinstance(dest, str):
            with open(dest, "w", encoding="utf-8", newline="") as fh:
                _emit(fh)
        else:
            _emit(dest)


def mg1_service(base: SimConfig) -> Optional[ServiceModel]:
    """ServiceModel when the base config is an M/G/1 case the formulas cover."""
    if not isinstance(base.ds_arrivals, Poisson):
        return None
    ds, nds = base.ds_sizes, base.nds_sizes
    if nds is not None and nds != ds:
        return None
    if isinstance(ds, Exponential):
        return ServiceModel(ds.mean / base.link_rate, 1.0)
    if isinstance(ds, Deterministic):
        return ServiceModel(ds.bits / base.link_rate, 0.0)
    return None


def _unimodal_violation(x, y, tol) -> bool:
    k = int(np.argmax(y))
    rise_after = np.diff(y[k:]) > tol[k + 1:]
    fall_before = -np.diff(y[:k + 1]) > tol[1:k + 1]
    return bool(np.any(rise_after) or np.any(fall_before))


def empirical_pfll(base: SimConfig, sweep: SweepConfig,
                   points: Optional[Sequence[SweepPoint]] = None) -> AllocationReport:
    """Full empirical pipeline: sweep, max allocation, f- and g-curves, argmaxes."""
    if points is None:
        points = run_sweep(base, sweep)
    points = list(points)
    lb_max, k = _crossing(points)

    lam = np.array([p.lambda_b for p in points[:k]])
    delay = np.array([p.mean_delay for p in points[:k]])
    rate_b = np.array([p.nds_rate for p in points[:k]])
    rate_s = np.array([p.ds_rate for p in points[:k]])
    se = np.array([p.mean_delay_se for p in points[:k]])

    # D at the max allocation: linear interpolation across the bracketing pair.
    lo, hi = points[k - 1], points[k]
    if hi.stable and hi.lambda_b > lo.lambda_b:
        w = (lb_max - lo.lambda_b) / (hi.lambda_b - lo.lambda_b)
        d_max = lo.mean_delay + w * (hi.mean_delay - lo.mean_delay)
        rb_max = lo.nds_rate + w * (hi.nds_rate - lo.nds_rate)
        rs_max = lo.ds_rate + w * (hi.ds_rate - lo.ds_rate)
    else:
        d_max, rb_max, rs_max = lo.mean_delay, lo.nds_rate, lo.ds_rate
    if lb_max > lam[-1]:
        lam = np.append(lam, lb_max)
        delay = np.append(delay, d_max)
        rate_b = np.append(rate_b, rb_max)
        rate_s = np.append(rate_s, rs_max)
        se = np.append(se, se[-1])

    d0 = delay[0]
    f_vals = lam * (d_max - delay)
    f_vals[0] = 0.0
    f_vals[-1] = 0.0 if lam[-1] == lb_max else f_vals[-1]
    g_vals = rate_b / rate_s - (delay - d0) / d0
    g_vals[0] = 0.0

    f_curve = GainCurve(lam, f_vals)
    g_curve = GainCurve(lam, g_vals)
    pfll, _ = refine_argmax(lam, f_vals)
    argmax_g, _ = refine_argmax(lam, g_vals)

    finite_se = se[np.isfinite(se)]
    noise = 2.0 * float(np.max(finite_se)) if len(finite_se) else math.nan
    warnings = []
    tol_f = 2.0 * np.sqrt(2.0) * lam * np.nan_to_num(se, nan=0.0)
    if _unimodal_violation(lam, f_vals, tol_f):
        warnings.append("f-curve is not unimodal beyond the noise tolerance")
    tol_g = 2.0 * np.sqrt(2.0) * np.nan_to_num(se, nan=0.0) / d0
    if _unimodal_violation(lam, g_vals, tol_g):
        warnings.append("g-curve is not unimodal beyond the noise tolerance")
    if f_curve.argmax_rate in (lam[0], lam[-1]):
        warnings.append("f-curve maximum sits on the grid boundary")

    d_pfll = float(np.interp(pfll, lam, delay))
    if not (d0 <= d_pfll + noise and d_pfll <= d_max + noise):
        warnings.append("delay ordering zero <= pfll <= max violated beyond noise")
    for w in warnings:
        log.warning(w)

    report = AllocationReport(
        lambda_s=float(points[0].ds_rate),
        empirical_max=float(lb_max),
        empirical_pfll=float(min(pfll, lb_max)),
        g_curve=g_curve,
        f_curve=f_curve,
        delay_curve=delay,
        delay_at_zero=float(d0),
        delay_at_pfll=d_pfll,
        delay_at_max=float(d_max),
        argmax_g=float(argmax_g),
        noise_tolerance=noise,
        points=points,
        warnings=warnings,
    )
    if base.nds_sizes is not None:
        report.nds_mean_size_bits = float(mean_size_bits(base.nds_sizes))
    svc = mg1_service(base)
    if svc is not None:
        lam_s = base.ds_arrivals.rate
        try:
            report.analytic_max = qa.max_alloc(lam_s, svc)
            report.analytic_pfll = qa.pfll_alloc(lam_s, svc)
        except OutOfRegionError:
            pass
    return report


def compare_strategies(lambda_s: float, svc: ServiceModel) -> Tuple[float, float]:
    """(delay at max / delay at PFLL, max allocation / PFLL allocation)."""
    lb_max = qa.max_alloc(lambda_s, svc)
    lb_pf = qa.pfll_alloc(lambda_s, svc)
    if lb_pf <= 0:
        raise OutOfRegionError("PFLL allocation is zero at the LLR boundary; ratios undefined")
    d_max = qa.mean_delay(LinkLoad(lambda_s, lb_max), svc)
    d_pf = qa.mean_delay(LinkLoad(lambda_s, lb_pf), svc)
    return d_max / d_pf, lb_max / lb_pf


def percentile_impact(base: SimConfig, lambda_b_points: Sequence[float],
                      packets_per_point: Optional[int] = None,
                      time_per_point: Optional[float] = None,
                      seed_stride: int = 1) -> List[dict]:
    """DS delay percentiles (p50, p90, p99) at each NDS rate; DS stream shared."""
    rows = []
    for k, lb in enumerate(lambda_b_points):
        nds = Poisson(float(lb)) if lb > 0 else None
        if nds is not None and base.nds_sizes is None:
            raise InvalidArgumentError("base config needs an NDS size model")
        cfg = base.with_nds(nds, nds_seed=base.seed + seed_stride * (k + 1))
        if packets_per_point is not None or time_per_point is not None:
            cfg = cfg.replace(max_packets=packets_per_point, max_time=time_per_point)
        d = np.sort(run(cfg).ds.delays)
        rows.append({
            "lambda_b": float(lb),
            "p50": nearest_rank(d, 0.5),
            "p90": nearest_rank(d, 0.9),
            "p99": nearest_rank(d, 0.99),
            "mean": float(np.mean(d)),
        })
    return rows

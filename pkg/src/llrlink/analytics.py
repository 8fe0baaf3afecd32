"""Closed-form M/G/1 results for a FIFO link shared by a DS and an NDS flow.

Every rate is in packets/second and every delay in seconds. The link is
described by a :class:`ServiceModel` (mean service time and its coefficient
of variation) and the offered traffic by a :class:`LinkLoad`.

The functions are pure and hold no state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateCurveError,
    InvalidArgumentError,
    OutOfRegionError,
    UnstableLinkError,
)

# Absolute slack (scaled by mu) for boundary comparisons and clamping.
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class ServiceModel:
    """Service time distribution summarised by E[S] and C_S."""

    mean_service_time: float
    cv: float = 1.0

    def __post_init__(self):
        if not (self.mean_service_time > 0 and math.isfinite(self.mean_service_time)):
            raise InvalidArgumentError(
                f"mean_service_time must be positive, got {self.mean_service_time}")
        if not (self.cv >= 0 and math.isfinite(self.cv)):
            raise InvalidArgumentError(f"cv must be >= 0, got {self.cv}")

    @classmethod
    def from_rate(cls, mu: float, cv: float = 1.0) -> "ServiceModel":
        if not mu > 0:
            raise InvalidArgumentError(f"mu must be positive, got {mu}")
        return cls(1.0 / mu, cv)

    @classmethod
    def from_link(cls, link_rate: float, mean_size: float, cv: float = 1.0) -> "ServiceModel":
        """Build from a link rate (bits/s) and a mean packet length (bits)."""
        if not (link_rate > 0 and mean_size > 0):
            raise InvalidArgumentError("link_rate and mean_size must be positive")
        return cls(mean_size / link_rate, cv)

    @property
    def mu(self) -> float:
        return 1.0 / self.mean_service_time

    @property
    def theta(self) -> float:
        return (1.0 + self.cv ** 2) / 2.0

    @property
    def second_moment(self) -> float:
        return self.mean_service_time ** 2 * (1.0 + self.cv ** 2)


@dataclass(frozen=True)
class LinkLoad:
    lambda_s: float
    lambda_b: float = 0.0

    def __post_init__(self):
        for name in ("lambda_s", "lambda_b"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise InvalidArgumentError(f"{name} must be a finite rate >= 0, got {v}")

    @property
    def total(self) -> float:
        return self.lambda_s + self.lambda_b

    def utilization(self, svc: ServiceModel) -> float:
        return self.total / svc.mu

    def ds_utilization(self, svc: ServiceModel) -> float:
        return self.lambda_s / svc.mu

    def nds_utilization(self, svc: ServiceModel) -> float:
        return self.lambda_b / svc.mu


@dataclass
class GainCurve:
    """Objective values sampled over a grid of NDS rates."""

    lambda_b_grid: np.ndarray
    values: np.ndarray
    argmax_rate: float = field(init=False)
    argmax_value: float = field(init=False)

    def __post_init__(self):
        self.lambda_b_grid = np.asarray(self.lambda_b_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.lambda_b_grid.shape != self.values.shape or self.values.ndim != 1:
            raise InvalidArgumentError("grid and values must be 1-D and the same length")
        if len(self.values) == 0:
            raise InvalidArgumentError("empty curve")
        if np.any(np.diff(self.lambda_b_grid) <= 0):
            raise InvalidArgumentError("lambda_b grid must be strictly increasing")
        k = int(np.argmax(self.values))
        self.argmax_rate = float(self.lambda_b_grid[k])
        self.argmax_value = float(self.values[k])


def _stable(load: LinkLoad, svc: ServiceModel) -> None:
    a = load.utilization(svc)
    if a >= 1.0:
        raise UnstableLinkError(f"link utilization {a:.6g} >= 1; mean delay undefined")


def _need_ds(lambda_s: float) -> None:
    if not lambda_s > 0:
        raise InvalidArgumentError("lambda_s must be > 0")


def gamma_ratio(load_total: float, svc: ServiceModel) -> float:
    """M/G/1 to M/M/1 delay ratio 1 - a + a*theta at aggregate rate ``load_total``."""
    if not load_total >= 0:
        raise InvalidArgumentError(f"rate must be >= 0, got {load_total}")
    a = load_total / svc.mu
    return 1.0 - a + a * svc.theta


def mean_delay(load: LinkLoad, svc: ServiceModel) -> float:
    """Mean sojourn time, identical for DS and NDS packets under FIFO."""
    _stable(load, svc)
    lam = load.total
    return gamma_ratio(lam, svc) / (svc.mu - lam)


def mean_packets(load: LinkLoad, svc: ServiceModel) -> float:
    """Mean number of DS packets in the link (Little's law)."""
    return load.lambda_s * mean_delay(load, svc)


def in_llr(load: LinkLoad, svc: ServiceModel) -> bool:
    """True when the mean DS delay does not exceed the mean DS inter-arrival time."""
    _need_ds(load.lambda_s)
    if load.utilization(svc) >= 1.0:
        return False
    return mean_delay(load, svc) <= 1.0 / load.lambda_s + BOUNDARY_TOL


def llr_limit(svc: ServiceModel) -> float:
    return svc.mu / (1.0 + math.sqrt(svc.theta))


def beta(lambda_s: float, svc: ServiceModel) -> float:
    """Idle-capacity factor theta / Gamma(lambda_s); uses the DS rate only."""
    return svc.theta / gamma_ratio(lambda_s, svc)


def kappa_plus(lambda_s: float, svc: ServiceModel) -> float:
    return 1.0 + beta(lambda_s, svc)


def _check_region(lambda_s: float, svc: ServiceModel) -> None:
    _need_ds(lambda_s)
    limit = llr_limit(svc)
    if lambda_s > limit + BOUNDARY_TOL * svc.mu:
        raise OutOfRegionError(f"lambda_s {lambda_s:.6g} exceeds LLR limit {limit:.6g}")


def _clamp(x: float, svc: ServiceModel) -> float:
    if x < 0 and x > -BOUNDARY_TOL * svc.mu:
        return 0.0
    return x


def max_alloc(lambda_s: float, svc: ServiceModel) -> float:
    """Largest NDS rate that keeps the DS flow inside the LLR."""
    _check_region(lambda_s, svc)
    x = (svc.mu - lambda_s) / gamma_ratio(lambda_s, svc) - lambda_s
    return max(_clamp(x, svc), 0.0)


def kappa_star(lambda_s: float, svc: ServiceModel) -> float:
    _need_ds(lambda_s)
    if lambda_s >= svc.mu:
        raise InvalidArgumentError("lambda_s must be below mu")
    return 1.0 + math.sqrt(beta(lambda_s, svc) * (svc.mu - lambda_s) / lambda_s)


def pfll_alloc(lambda_s: float, svc: ServiceModel) -> float:
    """Proportional-fair NDS rate: the maximiser of :func:`gain`."""
    _check_region(lambda_s, svc)
    mu = svc.mu
    x = mu - lambda_s - math.sqrt(beta(lambda_s, svc) * lambda_s * (mu - lambda_s))
    return max(_clamp(x, svc), 0.0)


def throughput_gain(load: LinkLoad) -> float:
    _need_ds(load.lambda_s)
    return load.lambda_b / load.lambda_s


def delay_loss(load: LinkLoad, svc: ServiceModel) -> float:
    """Relative increase of the DS mean delay caused by the NDS flow."""
    _stable(load, svc)
    return beta(load.lambda_s, svc) * load.lambda_b / (svc.mu - load.total)


def gain(load: LinkLoad, svc: ServiceModel) -> float:
    """Throughput gain minus delay loss."""
    _need_ds(load.lambda_s)
    _stable(load, svc)
    return load.lambda_b * (1.0 / load.lambda_s - beta(load.lambda_s, svc) / (svc.mu - load.total))


def gain_derivative(load: LinkLoad, svc: ServiceModel) -> float:
    _need_ds(load.lambda_s)
    _stable(load, svc)
    rest = svc.mu - load.lambda_s
    return 1.0 / load.lambda_s - beta(load.lambda_s, svc) * rest / (rest - load.lambda_b) ** 2


DelayFn = Callable[[float], float]


def analytic_delay_fn(lambda_s: float, svc: ServiceModel) -> DelayFn:
    return lambda lb: mean_delay(LinkLoad(lambda_s, lb), svc)


def f_alt(load: LinkLoad, svc: ServiceModel, delay_at: Optional[DelayFn] = None,
          lambda_b_plus: Optional[float] = None) -> float:
    """Alternative objective lambda_b * (D(lambda_b+) - D(lambda_b)).

    ``delay_at`` maps an NDS rate to a mean DS delay. It defaults to the
    M/G/1 formula but may be any estimator, e.g. one backed by simulation.
    """
    if delay_at is None:
        delay_at = analytic_delay_fn(load.lambda_s, svc)
    if lambda_b_plus is None:
        lambda_b_plus = max_alloc(load.lambda_s, svc)
    if load.lambda_b > lambda_b_plus + BOUNDARY_TOL * svc.mu:
        raise OutOfRegionError(
            f"lambda_b {load.lambda_b:.6g} exceeds max allocation {lambda_b_plus:.6g}")
    if load.lambda_b == 0.0:
        return 0.0
    return load.lambda_b * (delay_at(lambda_b_plus) - delay_at(load.lambda_b))


def normalize_curve(curve: GainCurve) -> GainCurve:
    peak = float(np.max(curve.values))
    if not peak > 0:
        raise DegenerateCurveError("curve has no strictly positive value to normalise by")
    return GainCurve(curve.lambda_b_grid.copy(), curve.values / peak)


def allocation_grid(lambda_s: float, svc: ServiceModel, step: float) -> np.ndarray:
    """Grid over [0, lambda_b+] inclusive with the given spacing."""
    top = max_alloc(lambda_s, svc)
    if top == 0.0:
        return np.array([0.0])
    n = int(math.floor(top / step + 1e-9))
    grid = np.arange(n + 1) * step
    if top - grid[-1] > 1e-9 * step:
        grid = np.append(grid, top)
    else:
        grid[-1] = top
    return grid


def g_curve(lambda_s: float, svc: ServiceModel, grid: Sequence[float]) -> GainCurve:
    values = [gain(LinkLoad(lambda_s, float(lb)), svc) for lb in grid]
    return GainCurve(np.asarray(grid, dtype=float), np.asarray(values))


def f_curve(lambda_s: float, svc: ServiceModel, grid: Sequence[float],
            delay_at: Optional[DelayFn] = None) -> GainCurve:
    top = max_alloc(lambda_s, svc)
    if delay_at is None:
        delay_at = analytic_delay_fn(lambda_s, svc)
    values = [f_alt(LinkLoad(lambda_s, float(lb)), svc, delay_at, top) for lb in grid]
    return GainCurve(np.asarray(grid, dtype=float), np.asarray(values))

"""Event-driven simulation of a single FIFO link shared by a DS and an NDS flow.

The link has an unbounded buffer and one transmitter of rate ``link_rate``
bits/s. A packet's service time is ``size / link_rate``. Packets of both
flows are merged by arrival time (ties: DS first, then generation order)
and served strictly in that order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence, Union

import numpy as np
from numba import njit

from .errors import EmptyResultError, InvalidArgumentError, SimulationAbort
from .traffic import (
    ArrivalModel,
    Deterministic,
    Exponential,
    PacketSource,
    Poisson,
    SizeModel,
    mean_size_bits,
)

DS, NDS = 0, 1
FLOW_NAMES = {DS: "DS", NDS: "NDS"}
INITIAL_WINDOW_PACKETS = 1 << 22
DEFAULT_MAX_QUEUE = 10_000_000

_DONE, _NEED_MORE, _ABORT, _DRAINED = 0, 1, 2, 3


@njit(cache=True)
def _fifo_events(arr, svc, t_stop, t_known, budget, max_queue, dep):
    """Run the event loop over sorted arrivals ``arr`` with service times ``svc``.

    Two event kinds: the next arrival and the completion of the packet in
    service. Arrivals at or after ``t_known`` have not been generated yet.
    Fills ``dep`` for every completed packet; returns
    (status, n_arrived, n_departed, t_end, peak_queue).
    """
    n = arr.shape[0]
    inf = np.inf
    i = 0  # next arrival index
    head = 0  # packet in service (or next to serve)
    busy = False
    t_done = inf  # completion time of the packet in service
    t = 0.0
    peak = 0
    while True:
        next_arr = arr[i] if i < n else inf
        next_dep = t_done if busy else inf
        t_next = min(next_arr, next_dep)
        if t_next >= t_known and t_known <= t_stop:
            if t_known == inf:
                return _DRAINED, i, head, t, peak
            return _NEED_MORE, i, head, t, peak
        if t_next > t_stop:
            return _DONE, i, head, t_stop, peak
        t = t_next
        if next_dep <= next_arr:
            dep[head] = t
            head += 1
            if head == budget:
                return _DONE, i, head, t, peak
            if head < i:
                t_done = t + svc[head]
            else:
                busy = False
        else:
            i += 1
            if not busy:
                # work conservation: an idle server implies an empty queue
                if head != i - 1:
                    raise AssertionError("server idle with packets waiting")
                busy = True
                t_done = t + svc[head]
            q = i - head
            if q > peak:
                peak = q
            if q > max_queue:
                return _ABORT, i, head, t, peak


@dataclass(frozen=True, eq=False)
class SimConfig:
    """One simulation run.

    ``max_packets`` counts delivered packets of both flows; ``max_time`` is
    simulated seconds. At least one must be given; the run stops at
    whichever comes first. ``nds_arrivals=None`` means a DS-only link.
    """

    link_rate: float
    ds_arrivals: ArrivalModel
    ds_sizes: SizeModel
    nds_arrivals: Optional[ArrivalModel] = None
    nds_sizes: Optional[SizeModel] = None
    max_packets: Optional[int] = None
    max_time: Optional[float] = None
    warmup: float = 0.1
    seed: int = 0
    nds_seed: Optional[int] = None
    max_queue: int = DEFAULT_MAX_QUEUE

    def __post_init__(self):
        if not self.link_rate > 0:
            raise InvalidArgumentError("link_rate must be > 0")
        if not 0.0 <= self.warmup <= 0.5:
            raise InvalidArgumentError("warmup must lie in [0, 0.5]")
        if self.max_packets is None and self.max_time is None:
            raise InvalidArgumentError("need max_packets and/or max_time")
        if self.max_packets is not None and self.max_packets < 1:
            raise InvalidArgumentError("max_packets must be >= 1")
        if self.max_time is not None and not self.max_time > 0:
            raise InvalidArgumentError("max_time must be > 0")
        if self.nds_arrivals is not None and self.nds_sizes is None:
            raise InvalidArgumentError("NDS arrivals given without an NDS size model")

    def with_nds(self, arrivals: Optional[ArrivalModel], nds_seed: Optional[int] = None) -> "SimConfig":
        return SimConfig(**{**self.__dict__, "nds_arrivals": arrivals, "nds_seed": nds_seed})

    def replace(self, **kw) -> "SimConfig":
        return SimConfig(**{**self.__dict__, **kw})


@dataclass(frozen=True, eq=False)
class FlowRecord:
    """Delivered packets of one flow, in service order (warmup included)."""

    arrivals: np.ndarray
    departures: np.ndarray
    sizes: np.ndarray
    n_arrived: int  # arrivals up to the end of the run, delivered or not
    n_discarded: int  # leading samples dropped as warmup
    first_arrival: float
    last_arrival: float

    @property
    def n_delivered(self) -> int:
        return len(self.departures)

    @property
    def in_system(self) -> int:
        return self.n_arrived - self.n_delivered

    @property
    def delays(self) -> np.ndarray:
        k = self.n_discarded
        return self.departures[k:] - self.arrivals[k:]

    @property
    def delivered_bits(self) -> float:
        return float(np.sum(self.sizes))

    @property
    def mean_iat(self) -> float:
        """Mean gap between this flow's arrivals over the run."""
        if self.n_arrived < 2:
            return math.nan
        return (self.last_arrival - self.first_arrival) / (self.n_arrived - 1)


@dataclass(frozen=True, eq=False)
class SimResult:
    config: SimConfig
    ds: FlowRecord
    nds: FlowRecord
    duration: float
    peak_queue: int
    stop_reason: str
    notes: dict = field(default_factory=dict)

    def flow(self, flow: Union[int, str]) -> FlowRecord:
        if flow in (DS, "DS", "ds"):
            return self.ds
        if flow in (NDS, "NDS", "nds"):
            return self.nds
        raise InvalidArgumentError(f"unknown flow {flow!r}")

    def mean_delay(self, flow=DS) -> float:
        d = self.flow(flow).delays
        return float(np.mean(d)) if len(d) else math.nan

    def throughput(self, flow=DS) -> float:
        """Delivered packets per second."""
        return self.flow(flow).n_delivered / self.duration

    def throughput_bps(self, flow=DS) -> float:
        return self.flow(flow).delivered_bits / self.duration

    def mean_delay_se(self, flow=DS, n_batches: int = 20) -> float:
        """Standard error of the mean delay by non-overlapping batch means."""
        d = self.flow(flow).delays
        if len(d) < 2 * n_batches:
            return math.nan
        m = len(d) // n_batches
        means = d[: m * n_batches].reshape(n_batches, m).mean(axis=1)
        return float(np.std(means, ddof=1) / math.sqrt(n_batches))


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _rngs(config: SimConfig):
    ds_ss = np.random.SeedSequence([config.seed, 0])
    nds_ss = np.random.SeedSequence([config.seed if config.nds_seed is None else config.nds_seed, 1])
    ds_a, ds_s = (np.random.default_rng(s) for s in ds_ss.spawn(2))
    nds_a, nds_s = (np.random.default_rng(s) for s in nds_ss.spawn(2))
    return ds_a, ds_s, nds_a, nds_s


def _initial_window(config: SimConfig) -> float:
    rate = config.ds_arrivals.mean_rate
    if config.nds_arrivals is not None:
        rate += config.nds_arrivals.mean_rate
    # bounded so an unstable run aborts before generating its whole budget
    t = INITIAL_WINDOW_PACKETS / rate
    if config.max_packets is not None:
        t = min(t, 1.05 * config.max_packets / rate + 50.0 / rate)
    if config.max_time is not None:
        t = min(t, config.max_time)
    return t


def run(config: SimConfig) -> SimResult:
    """Simulate until the time horizon or the delivered-packet budget.

    Packets still queued or in service at the end are not sampled. The
    first ``warmup`` fraction of each flow's delivered packets is dropped
    from the delay samples. Deterministic for a given config.
    """
    ds_a, ds_s, nds_a, nds_s = _rngs(config)
    sources = [PacketSource(config.ds_arrivals, config.ds_sizes, ds_a, ds_s)]
    if config.nds_arrivals is not None:
        sources.append(PacketSource(config.nds_arrivals, config.nds_sizes, nds_a, nds_s))

    t_stop = math.inf if config.max_time is None else float(config.max_time)
    budget = -1 if config.max_packets is None else int(config.max_packets)
    t_known = _initial_window(config)

    while True:
        for src in sources:
            src.extend_to(t_known)
        if all(src.exhausted for src in sources):
            t_known = math.inf
        parts = [src.arrays(t_known) for src in sources]
        times = np.concatenate([p[0] for p in parts])
        sizes = np.concatenate([p[1] for p in parts])
        flows = np.concatenate([np.full(len(p[0]), k, dtype=np.int8) for k, p in enumerate(parts)])
        seq = np.concatenate([np.arange(len(p[0])) for p in parts])
        order = np.lexsort((seq, flows, times))
        arr = np.ascontiguousarray(times[order])
        svc = sizes[order] / config.link_rate
        dep = np.full(len(arr), np.nan)
        status, n_arr, n_dep, t_end, peak = _fifo_events(
            arr, svc, t_stop, t_known, budget, config.max_queue, dep)
        if status == _NEED_MORE:
            t_known *= 2.0
            continue
        break

    if status == _ABORT:
        raise SimulationAbort(
            f"unstable: queue exceeded {config.max_queue} packets at t={t_end:.6g} s",
            queue_length=n_arr - n_dep, time=t_end)
    if n_arr == 0:
        raise EmptyResultError("no packet arrived within the horizon")

    reason = {_DONE: "budget" if n_dep == budget else "time", _DRAINED: "end_of_trace"}[status]
    f_arr = flows[order][:n_arr]
    records = []
    for k in (DS, NDS):
        sel_arr = np.nonzero(f_arr == k)[0]
        sel = sel_arr[sel_arr < n_dep]
        nd = len(sel)
        rec = FlowRecord(
            arrivals=_readonly(arr[sel]),
            departures=_readonly(dep[sel]),
            sizes=_readonly(sizes[order][sel]),
            n_arrived=len(sel_arr),
            n_discarded=int(math.floor(config.warmup * nd)),
            first_arrival=float(arr[sel_arr[0]]) if len(sel_arr) else math.nan,
            last_arrival=float(arr[sel_arr[-1]]) if len(sel_arr) else math.nan,
        )
        records.append(rec)
    return SimResult(config, records[0], records[1], float(t_end), int(peak), reason)


# --------------------------------------------------------------------------
# empirical delay distribution

def _samples(result: SimResult, flow) -> np.ndarray:
    d = result.flow(flow).delays
    if len(d) == 0:
        raise EmptyResultError(f"no delay samples for flow {flow!r}")
    return np.sort(d)


def delay_cdf(result: SimResult, flow, grid: Sequence[float]) -> np.ndarray:
    d = _samples(result, flow)
    return np.searchsorted(d, np.asarray(grid, dtype=float), side="right") / len(d)


def nearest_rank(sorted_samples: np.ndarray, p: float) -> float:
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError("percentile fraction must lie in (0, 1)")
    n = len(sorted_samples)
    k = max(1, math.ceil(p * n - 1e-9))
    return float(sorted_samples[k - 1])


def delay_percentile(result: SimResult, flow, p: float) -> float:
    return nearest_rank(_samples(result, flow), p)


def export_packets(result: SimResult, dest: Union[str, IO]) -> None:
    """Per-packet CSV ``flow,arrival_s,departure_s,delay_s`` (warmup excluded)."""
    def _emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flow", "arrival_s", "departure_s", "delay_s"])
        for k in (DS, NDS):
            f = result.flow(k)
            s = f.n_discarded
            for a, d in zip(f.arrivals[s:], f.departures[s:]):
                w.writerow([FLOW_NAMES[k], f"{a:.9f}", f"{d:.9f}", f"{d - a:.9f}"])

    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            _emit(fh)
    else:
        _emit(dest)


def mg1_config(lambda_s: float, lambda_b: float = 0.0, mu: float = 1.0, cv: float = 1.0,
               max_packets: int = 1_000_000, seed: int = 0, **kw) -> SimConfig:
    """Poisson DS/NDS flows with exponential (cv=1) or constant (cv=0) sizes."""
    if cv == 1.0:
        sizes: SizeModel = Exponential(1.0)
    elif cv == 0.0:
        sizes = Deterministic(1.0)
    else:
        raise InvalidArgumentError("mg1_config supports cv in {0, 1}")
    nds = Poisson(lambda_b) if lambda_b > 0 else None
    return SimConfig(link_rate=mu, ds_arrivals=Poisson(lambda_s), ds_sizes=sizes,
                     nds_arrivals=nds, nds_sizes=sizes,
                     max_packets=max_packets, seed=seed, **kw)


__all__ = [
    "DS", "NDS", "SimConfig", "SimResult", "FlowRecord", "run", "delay_cdf",
    "delay_percentile", "export_packets", "mg1_config", "mean_size_bits",
]

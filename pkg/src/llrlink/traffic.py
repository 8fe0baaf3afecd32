"""Packet generators (stochastic and trace-driven) and trace characterisation.

Traces are CSV files with a ``timestamp_s,size_bytes`` header and one packet
per row. In memory a trace is a list of :class:`TraceRecord` with sizes in
bits.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass
from typing import IO, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EndOfTrace, InvalidArgumentError, TraceError

log = logging.getLogger(__name__)

TRACE_HEADER = ("timestamp_s", "size_bytes")
DEFAULT_BATCH_GAP = 100e-6
DEFAULT_INTRA_BATCH_GAP = 10e-6

# Events drawn per vectorised refill of a packet source.
CHUNK_EVENTS = 1 << 16


@dataclass(frozen=True)
class TraceRecord:
    timestamp: float  # seconds since trace start
    size: float  # bits


def trace_arrays(records: Sequence[TraceRecord]) -> Tuple[np.ndarray, np.ndarray]:
    t = np.fromiter((r.timestamp for r in records), dtype=float, count=len(records))
    s = np.fromiter((r.size for r in records), dtype=float, count=len(records))
    return t, s


def records_from_arrays(times, sizes_bits) -> List[TraceRecord]:
    return [TraceRecord(float(t), float(s)) for t, s in zip(times, sizes_bits)]


# --------------------------------------------------------------------------
# trace file I/O

def load_trace(source: Union[str, bytes, IO]) -> List[TraceRecord]:
    """Parse a ``timestamp_s,size_bytes`` CSV into records (sizes in bits).

    ``source`` may be a path, raw bytes, or an open text/binary stream.
    Out-of-order rows are sorted with a warning.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceError("empty trace file") from None
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise TraceError(f"line 1: expected header {','.join(TRACE_HEADER)!r}, got {','.join(header)!r}")

    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 2:
            raise TraceError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            ts = float(row[0])
            size = int(row[1])
        except ValueError:
            raise TraceError(f"line {lineno}: cannot parse {row!r}") from None
        if not math.isfinite(ts) or ts < 0:
            raise TraceError(f"line {lineno}: bad timestamp {row[0]!r}")
        if size <= 0:
            raise TraceError(f"line {lineno}: packet size must be positive")
        records.append(TraceRecord(ts, 8.0 * size))

    if not records:
        raise TraceError("trace has no packets")
    if any(b.timestamp < a.timestamp for a, b in zip(records, records[1:])):
        log.warning("trace timestamps out of order; sorting %d records", len(records))
        records.sort(key=lambda r: r.timestamp)
    return records


def write_trace(records: Iterable[TraceRecord], dest: Union[str, IO]) -> None:
    """Write records in the trace CSV format (sizes rounded to whole bytes)."""
    def _emit(fh):
        fh.write(",".join(TRACE_HEADER) + "\n")
        for r in records:
            fh.write(f"{r.timestamp:.9f},{int(round(r.size / 8.0))}\n")

    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            _emit(fh)
    else:
        _emit(dest)


# --------------------------------------------------------------------------
# trace statistics

@dataclass(frozen=True)
class TraceStats:
    """Table-style summary of a packet trace.

    ``mean_iat``/``cv_iat`` describe the gaps between consecutive batch
    starts. ``cv_service`` is the CV of size/``link_rate``.
    """

    load: float  # bits/second
    mean_iat: float  # seconds
    cv_iat: float
    mean_size: float  # bytes
    cv_service: float
    mean_batch_size: float  # packets
    link_rate: float = 100e6
    batch_gap_threshold: float = DEFAULT_BATCH_GAP
    n_packets: int = 0
    n_batches: int = 0
    mean_packet_iat: float = float("nan")
    cv_packet_iat: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def _cv(x: np.ndarray) -> float:
    m = float(np.mean(x))
    if m == 0:
        return 0.0
    return float(np.std(x)) / m


def batch_starts(times: np.ndarray, threshold: float) -> np.ndarray:
    """Indices of packets that open a batch (gap to predecessor >= threshold)."""
    gaps = np.diff(times)
    return np.concatenate(([0], np.nonzero(gaps >= threshold)[0] + 1))


def trace_stats(records: Sequence[TraceRecord], link_rate: float = 100e6,
                batch_gap_threshold: float = DEFAULT_BATCH_GAP) -> TraceStats:
    """Compute load, E[tau], C_tau, E[Ls], C_S and E[sigma] for a trace.

    A batch is a maximal run of packets whose consecutive gaps are below
    ``batch_gap_threshold``; tau is the time between consecutive batch
    starts. Load is E[Ls]/E[packet gap], i.e. each packet owns one mean gap.
    """
    if len(records) < 2:
        raise TraceError("trace_stats needs at least 2 records")
    if not (link_rate > 0 and batch_gap_threshold > 0):
        raise InvalidArgumentError("link_rate and batch_gap_threshold must be positive")
    t, bits = trace_arrays(records)
    pkt_gaps = np.diff(t)
    mean_pkt_gap = float(np.mean(pkt_gaps))
    if mean_pkt_gap <= 0:
        raise TraceError("trace spans zero time")

    starts = batch_starts(t, batch_gap_threshold)
    if len(starts) < 2:
        raise TraceError("trace holds a single batch; lower batch_gap_threshold")
    batch_gaps = np.diff(t[starts])
    sizes_per_batch = np.diff(np.append(starts, len(t)))

    service = bits / link_rate
    return TraceStats(
        load=float(np.mean(bits)) / mean_pkt_gap,
        mean_iat=float(np.mean(batch_gaps)),
        cv_iat=_cv(batch_gaps),
        mean_size=float(np.mean(bits)) / 8.0,
        cv_service=_cv(service),
        mean_batch_size=float(np.mean(sizes_per_batch)),
        link_rate=float(link_rate),
        batch_gap_threshold=float(batch_gap_threshold),
        n_packets=len(t),
        n_batches=len(starts),
        mean_packet_iat=mean_pkt_gap,
        cv_packet_iat=_cv(pkt_gaps),
    )


# --------------------------------------------------------------------------
# models

@dataclass(frozen=True)
class BatchSize:
    """Batch-size distribution.

    kinds: ``fixed`` (floor or ceil of the mean, mixed to hit the mean; the
    least variable integer law), ``shifted_poisson`` (1 + Poisson(mean - 1)),
    ``geometric`` (support 1, 2, ...).
    """

    mean: float
    kind: str = "shifted_poisson"

    def __post_init__(self):
        if self.kind not in ("fixed", "shifted_poisson", "geometric"):
            raise InvalidArgumentError(f"unknown batch size kind {self.kind!r}")
        if not self.mean >= 1:
            raise InvalidArgumentError("mean batch size must be >= 1")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.mean == 1:
            return np.ones(n, dtype=np.int64)
        if self.kind == "fixed":
            lo = math.floor(self.mean)
            if lo == self.mean:
                return np.full(n, lo, dtype=np.int64)
            return lo + (rng.random(n) < self.mean - lo).astype(np.int64)
        if self.kind == "shifted_poisson":
            return 1 + rng.poisson(self.mean - 1.0, n)
        return rng.geometric(1.0 / self.mean, n)


@dataclass(frozen=True)
class Poisson:
    rate: float  # packets/second

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidArgumentError("Poisson rate must be > 0")

    @property
    def mean_rate(self) -> float:
        return self.rate


@dataclass(frozen=True)
class BatchPoisson:
    """Batches of back-to-back packets separated by exponential silences.

    A batch's packets are ``intra_batch_gap`` apart. The silence from the
    last packet of one batch to the first of the next is
    ``min_gap + Exp(1/batch_rate)``; with ``min_gap=0`` the batch epochs are
    Poisson relative to batch ends.
    """

    batch_rate: float
    batch_size: BatchSize
    intra_batch_gap: float = DEFAULT_INTRA_BATCH_GAP
    min_gap: float = 0.0

    def __post_init__(self):
        if not self.batch_rate > 0:
            raise InvalidArgumentError("batch_rate must be > 0")
        if self.intra_batch_gap < 0 or self.min_gap < 0:
            raise InvalidArgumentError("gaps must be >= 0")

    @property
    def mean_rate(self) -> float:
        cycle = (self.batch_size.mean - 1.0) * self.intra_batch_gap + self.min_gap + 1.0 / self.batch_rate
        return self.batch_size.mean / cycle


@dataclass(frozen=True, eq=False)
class TraceReplay:
    """Replays trace timestamps; with ``loop`` each pass is offset by ``duration``.

    ``duration`` defaults to the last timestamp, so the wrap gap equals the
    first record's timestamp.
    """

    records: Tuple[TraceRecord, ...]
    loop: bool = True
    duration: Optional[float] = None

    def __post_init__(self):
        if len(self.records) == 0:
            raise InvalidArgumentError("trace replay needs a non-empty trace")
        object.__setattr__(self, "records", tuple(self.records))
        if self.duration is None:
            object.__setattr__(self, "duration", self.records[-1].timestamp)
        if self.loop and not self.duration > 0:
            raise InvalidArgumentError("looping replay needs a positive duration")

    @property
    def mean_rate(self) -> float:
        return len(self.records) / self.duration if self.duration > 0 else float("inf")


ArrivalModel = Union[Poisson, BatchPoisson, TraceReplay]


@dataclass(frozen=True)
class Exponential:
    mean: float  # bits

    def __post_init__(self):
        if not self.mean > 0:
            raise InvalidArgumentError("mean size must be > 0")


@dataclass(frozen=True)
class Deterministic:
    bits: float

    def __post_init__(self):
        if not self.bits > 0:
            raise InvalidArgumentError("packet size must be > 0")

    @property
    def mean(self) -> float:
        return self.bits


@dataclass(frozen=True, eq=False)
class Empirical:
    """Sizes taken from a trace in replay order (cycled).

    With ``sizes=None`` the sizes come from the flow's TraceReplay records.
    """

    sizes: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.sizes is not None:
            object.__setattr__(self, "sizes", tuple(float(s) for s in self.sizes))
            if len(self.sizes) == 0 or min(self.sizes) <= 0:
                raise InvalidArgumentError("empirical sizes must be non-empty and positive")

    @property
    def mean(self) -> float:
        if self.sizes is None:
            return float("nan")
        return float(np.mean(self.sizes))


SizeModel = Union[Exponential, Deterministic, Empirical]


def mean_size_bits(sizes: SizeModel, arrivals: Optional[ArrivalModel] = None) -> float:
    if isinstance(sizes, Empirical) and sizes.sizes is None:
        if not isinstance(arrivals, TraceReplay):
            raise InvalidArgumentError("Empirical sizes without data need a TraceReplay arrival model")
        return float(np.mean([r.size for r in arrivals.records]))
    return sizes.mean


# --------------------------------------------------------------------------
# generators

class ArrivalProcess:
    """Stateful arrival generator: one RNG, one model.

    :meth:`next_arrival` yields ``(time, count)`` events one at a time;
    :meth:`events` draws them in vectorised blocks. Output is a pure function
    of the seed and the sequence of calls.
    """

    def __init__(self, model: ArrivalModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self._last_end = 0.0  # arrival time of the last packet emitted
        self._pos = 0  # TraceReplay record index (monotone across loops)
        if isinstance(model, TraceReplay):
            self._trace_t = np.array([r.timestamp for r in model.records])

    def next_arrival(self, now: Optional[float] = None) -> Tuple[float, int]:
        """Next event after the previous one; ``now`` is accepted for symmetry."""
        t, c = self.events(1)
        if len(t) == 0:
            raise EndOfTrace("trace exhausted")
        return float(t[0]), int(c[0])

    def events(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Next ``n`` arrival events as (epoch times, packet counts)."""
        m = self.model
        if isinstance(m, Poisson):
            gaps = self.rng.exponential(1.0 / m.rate, n)
            t = self._last_end + np.cumsum(gaps)
            self._last_end = float(t[-1])
            return t, np.ones(n, dtype=np.int64)
        if isinstance(m, BatchPoisson):
            silences = m.min_gap + self.rng.exponential(1.0 / m.batch_rate, n)
            counts = m.batch_size.sample(self.rng, n)
            spans = (counts - 1) * m.intra_batch_gap
            # start_k = end_{k-1} + silence_k ; end_k = start_k + span_k
            ends = self._last_end + np.cumsum(silences + spans)
            starts = ends - spans
            self._last_end = float(ends[-1])
            return starts, counts
        # TraceReplay
        nrec = len(self._trace_t)
        idx = self._pos + np.arange(n)
        if not m.loop:
            idx = idx[idx < nrec]
        self._pos += len(idx)
        t = self._trace_t[idx % nrec] + (idx // nrec) * m.duration
        if len(t):
            self._last_end = float(t[-1])
        return t, np.ones(len(t), dtype=np.int64)

    @property
    def exhausted(self) -> bool:
        m = self.model
        return isinstance(m, TraceReplay) and not m.loop and self._pos >= len(self._trace_t)

    def packet_times(self, n_events: int) -> np.ndarray:
        t, c = self.events(n_events)
        if isinstance(self.model, BatchPoisson):
            offs = np.arange(int(c.sum())) - np.repeat(np.cumsum(c) - c, c)
            return np.repeat(t, c) + offs * self.model.intra_batch_gap
        return t


def next_arrival(process: ArrivalProcess, now: Optional[float] = None) -> Tuple[float, int]:
    return process.next_arrival(now)


class SizeSampler:
    def __init__(self, model: SizeModel, rng: np.random.Generator,
                 arrivals: Optional[ArrivalModel] = None):
        self.model = model
        self.rng = rng
        self._pos = 0
        if isinstance(model, Empirical):
            if model.sizes is not None:
                self._data = np.asarray(model.sizes, dtype=float)
            elif isinstance(arrivals, TraceReplay):
                self._data = np.array([r.size for r in arrivals.records])
            else:
                raise InvalidArgumentError("Empirical sizes without data need a TraceReplay arrival model")

    def draw(self, n: int) -> np.ndarray:
        m = self.model
        if isinstance(m, Exponential):
            return self.rng.exponential(m.mean, n)
        if isinstance(m, Deterministic):
            return np.full(n, float(m.bits))
        idx = (self._pos + np.arange(n)) % len(self._data)
        self._pos += n
        return self._data[idx]


class PacketSource:
    """Arrival process plus size sampler, extended lazily in fixed blocks."""

    def __init__(self, arrivals: ArrivalModel, sizes: SizeModel,
                 arrival_rng: np.random.Generator, size_rng: np.random.Generator):
        self.process = ArrivalProcess(arrivals, arrival_rng)
        self.sizer = SizeSampler(sizes, size_rng, arrivals)
        self._times: List[np.ndarray] = []
        self._sizes: List[np.ndarray] = []
        self.last_time = -math.inf

    @property
    def exhausted(self) -> bool:
        return self.process.exhausted

    def extend_to(self, t_target: float) -> None:
        """Generate until some arrival is at or beyond ``t_target`` (or the trace ends)."""
        while self.last_time < t_target and not self.exhausted:
            t = self.process.packet_times(CHUNK_EVENTS)
            if len(t) == 0:
                break
            self._times.append(t)
            self._sizes.append(self.sizer.draw(len(t)))
            self.last_time = float(t[-1])

    def arrays(self, t_limit: float) -> Tuple[np.ndarray, np.ndarray]:
        """All generated packets strictly before ``t_limit``."""
        if not self._times:
            return np.empty(0), np.empty(0)
        if len(self._times) > 1:
            self._times = [np.concatenate(self._times)]
            self._sizes = [np.concatenate(self._sizes)]
        t, s = self._times[0], self._sizes[0]
        k = int(np.searchsorted(t, t_limit, side="left"))
        return t[:k], s[:k]


# --------------------------------------------------------------------------
# synthetic Stadia-like traces

# Reference rows per resolution: load (b/s), E[tau] (s), C_tau, E[Ls] (B), C_S, E[sigma]
STADIA_TABLE = {
    "720p": TraceStats(10.25e6, 1.700e-3, 0.97, 997.5, 0.40, 2.18),
    "1080p": TraceStats(27.47e6, 1.417e-3, 0.94, 1123.2, 0.23, 4.33),
    "2160p": TraceStats(39.89e6, 1.293e-3, 2.87, 1144.2, 0.19, 5.74),
}
# Reference PFLL allocations reported for the real traces (b/s).
STADIA_PFLL_REFERENCE = {"720p": 65e6, "1080p": 50e6, "2160p": 30e6}
# Packets inside a batch paced close to the 100 Mb/s serialisation time.
STADIA_INTRA_BATCH_GAP = 80e-6


def _size_bytes(rng: np.random.Generator, mean: float, cv: float, n: int) -> np.ndarray:
    if cv <= 0:
        raw = np.full(n, mean)
    else:
        k = 1.0 / cv ** 2
        raw = rng.gamma(k, mean / k, n)
    return np.maximum(np.rint(raw), 1.0)


def synth_stadia_like(stats: TraceStats, link_rate: float, duration: float,
                      rng: Union[np.random.Generator, int, None] = None,
                      intra_batch_gap: float = DEFAULT_INTRA_BATCH_GAP,
                      min_gap: Optional[float] = None,
                      batch_gap_threshold: float = DEFAULT_BATCH_GAP,
                      batch_kind: str = "shifted_poisson",
                      consistency_tol: float = 0.05) -> List[TraceRecord]:
    """Generate a batch-arrival trace that targets the given statistics.

    Load, E[tau], E[Ls] and E[sigma] are matched in expectation; C_tau is
    emergent and C_S follows from gamma-distributed sizes with the requested
    CV. ``min_gap`` (default: the batch threshold) keeps batches separable
    by :func:`trace_stats`. ``link_rate`` is unused by the generator beyond
    validation; service CV is scale free.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    for name in ("load", "mean_iat", "mean_size", "mean_batch_size"):
        if not getattr(stats, name) > 0:
            raise InvalidArgumentError(f"stats.{name} must be positive")
    if not (link_rate > 0 and duration > 0):
        raise InvalidArgumentError("link_rate and duration must be positive")

    sigma = stats.mean_batch_size
    implied_load = sigma * stats.mean_size * 8.0 / stats.mean_iat
    if abs(implied_load / stats.load - 1.0) > consistency_tol:
        raise InvalidArgumentError(
            f"infeasible stats: E[sigma]*E[Ls]/E[tau] = {implied_load:.4g} b/s "
            f"vs load {stats.load:.4g} b/s")

    if sigma == 1.0:
        model: ArrivalModel = Poisson(1.0 / stats.mean_iat)
    else:
        if min_gap is None:
            min_gap = batch_gap_threshold
        if intra_batch_gap >= batch_gap_threshold:
            raise InvalidArgumentError("intra_batch_gap must be below the batch gap threshold")
        if min_gap < batch_gap_threshold:
            log.warning("min_gap below batch threshold; measured batches may merge")
        exp_mean = stats.mean_iat - (sigma - 1.0) * intra_batch_gap - min_gap
        if exp_mean <= 0:
            raise InvalidArgumentError("infeasible stats: batches do not fit in E[tau]")
        model = BatchPoisson(1.0 / exp_mean, BatchSize(sigma, batch_kind), intra_batch_gap, min_gap)

    proc = ArrivalProcess(model, rng)
    times = []
    last = 0.0
    per = max(16, int(duration / stats.mean_iat * 1.1))
    while last < duration:
        t = proc.packet_times(per)
        times.append(t)
        last = float(t[-1])
    t = np.concatenate(times)
    t = t[t < duration]
    sizes = _size_bytes(rng, stats.mean_size, stats.cv_service, len(t)) * 8.0
    return records_from_arrays(t, sizes)


def stadia_trace(resolution: str, duration: float = 30.0, seed: int = 0,
                 link_rate: float = 100e6) -> List[TraceRecord]:
    """Synthetic stand-in for one of the three Tomb Raider downlink traces."""
    try:
        stats = STADIA_TABLE[resolution]
    except KeyError:
        raise InvalidArgumentError(f"unknown resolution {resolution!r}; "
                                   f"choose from {sorted(STADIA_TABLE)}") from None
    return synth_stadia_like(stats, link_rate, duration, np.random.default_rng(seed),
                             intra_batch_gap=STADIA_INTRA_BATCH_GAP)

import io
import math

import numpy as np
import pytest

from llrlink.errors import EmptyResultError, InvalidArgumentError, SimulationAbort
from llrlink.sim import (
    DS,
    NDS,
    SimConfig,
    delay_cdf,
    delay_percentile,
    export_packets,
    mg1_config,
    nearest_rank,
    run,
)
from llrlink.traffic import (
    Deterministic,
    Empirical,
    Exponential,
    Poisson,
    TraceRecord,
    TraceReplay,
    stadia_trace,
)

from oracles import heap_fifo, pk_delay


def fake_result(samples):
    cfg = mg1_config(0.5, max_packets=10, warmup=0.0)
    r = run(cfg)
    arr = np.zeros(len(samples))
    dep = np.asarray(samples, dtype=float)
    ds = type(r.ds)(arr, dep, np.ones(len(samples)), len(samples), 0, 0.0, 0.0)
    return type(r)(cfg, ds, r.nds, 1.0, 1, "budget")


class TestConfig:
    def test_needs_horizon(self):
        with pytest.raises(InvalidArgumentError):
            SimConfig(1.0, Poisson(0.5), Exponential(1.0))

    def test_warmup_range(self):
        with pytest.raises(InvalidArgumentError):
            SimConfig(1.0, Poisson(0.5), Exponential(1.0), max_time=10, warmup=0.6)

    def test_nds_needs_sizes(self):
        with pytest.raises(InvalidArgumentError):
            SimConfig(1.0, Poisson(0.5), Exponential(1.0), nds_arrivals=Poisson(0.1), max_time=10)


class TestAgainstOracles:
    def test_heap_event_calendar_identical(self):
        cfg = mg1_config(0.3, 0.4, cv=1.0, max_packets=20_000, warmup=0.0, seed=11)
        r = run(cfg)
        # rebuild the merged packet stream in service order
        arr = np.concatenate([r.ds.arrivals, r.nds.arrivals])
        svc = np.concatenate([r.ds.sizes, r.nds.sizes]) / cfg.link_rate
        dep = np.concatenate([r.ds.departures, r.nds.departures])
        flow = np.concatenate([np.zeros(r.ds.n_delivered), np.ones(r.nds.n_delivered)])
        o = np.lexsort((flow, arr))
        ref = heap_fifo(arr[o].tolist(), svc[o].tolist())
        assert np.array_equal(np.asarray(ref), dep[o])

    def test_mm1_delay(self):
        r = run(mg1_config(0.3, cv=1.0, max_packets=1_000_000, seed=1))
        assert r.mean_delay(DS) == pytest.approx(1 / 0.7, rel=0.02)

    def test_md1_delay(self):
        r = run(mg1_config(0.5, cv=0.0, max_packets=1_000_000, seed=2))
        assert r.mean_delay(DS) == pytest.approx(1.5, rel=0.02)
        assert 1.5 == pytest.approx(pk_delay(0.5, 1.0, 0.0))

    def test_two_flows_share_delay(self):
        r = run(mg1_config(0.25, 0.25, cv=1.0, max_packets=1_000_000, seed=3))
        assert r.mean_delay(DS) == pytest.approx(2.0, rel=0.02)
        assert r.mean_delay(NDS) == pytest.approx(2.0, rel=0.02)
        assert r.mean_delay(DS) == pytest.approx(r.mean_delay(NDS), rel=0.01)


@pytest.fixture(scope="module")
def result():
    return run(mg1_config(0.3, 0.5, cv=1.0, max_time=5000.0, max_packets=None, seed=4))


class TestInvariants:
    def test_conservation(self, result):
        for f in (result.ds, result.nds):
            assert f.n_arrived == f.n_delivered + f.in_system
            assert f.in_system >= 0

    def test_fifo(self, result):
        arr = np.concatenate([result.ds.arrivals, result.nds.arrivals])
        dep = np.concatenate([result.ds.departures, result.nds.departures])
        o = np.argsort(dep, kind="stable")
        assert np.all(np.diff(arr[o]) >= 0)

    def test_departure_after_service(self, result):
        for f in (result.ds, result.nds):
            assert np.all(f.departures - f.arrivals >= f.sizes / result.config.link_rate - 1e-12)

    def test_time_horizon(self, result):
        assert result.stop_reason == "time"
        assert result.duration == 5000.0
        assert result.ds.departures.max() <= 5000.0

    def test_warmup(self, result):
        assert result.ds.n_discarded == math.floor(0.1 * result.ds.n_delivered)
        assert len(result.ds.delays) == result.ds.n_delivered - result.ds.n_discarded
        assert result.mean_delay(DS) >= result.ds.delays.min()

    def test_readonly(self, result):
        with pytest.raises(ValueError):
            result.ds.arrivals[0] = 1.0


def test_budget_counts_all_flows():
    r = run(mg1_config(0.2, 0.3, max_packets=12_345, seed=1))
    assert r.stop_reason == "budget"
    assert r.ds.n_delivered + r.nds.n_delivered == 12_345


def test_determinism():
    cfg = mg1_config(0.4, 0.2, cv=0.0, max_packets=200_000, seed=42)
    a, b = run(cfg), run(cfg)
    assert np.array_equal(a.ds.departures, b.ds.departures)
    assert np.array_equal(a.nds.arrivals, b.nds.arrivals)
    c = run(cfg.replace(seed=43))
    assert not np.array_equal(a.ds.arrivals[:100], c.ds.arrivals[:100])


def test_common_random_numbers():
    base = mg1_config(0.2, max_packets=50_000, seed=5)
    a = run(base.with_nds(Poisson(0.1), nds_seed=100))
    b = run(base.with_nds(Poisson(0.3), nds_seed=101))
    n = min(1000, a.ds.n_delivered, b.ds.n_delivered)
    assert np.array_equal(a.ds.arrivals[:n], b.ds.arrivals[:n])


def test_unstable_aborts():
    cfg = mg1_config(1.2, max_packets=None, max_time=1e6, max_queue=5_000, seed=1)
    with pytest.raises(SimulationAbort, match="unstable"):
        run(cfg)


def test_tie_break_ds_first():
    recs = (TraceRecord(1.0, 1.0), TraceRecord(2.0, 1.0))
    cfg = SimConfig(1.0, TraceReplay(recs, loop=False), Empirical(),
                    nds_arrivals=TraceReplay(recs, loop=False), nds_sizes=Deterministic(1.0),
                    max_time=100.0, warmup=0.0)
    r = run(cfg)
    assert r.ds.departures.tolist() == [2.0, 4.0]
    assert r.nds.departures.tolist() == [3.0, 5.0]
    assert r.stop_reason == "time"


def test_finite_trace_ends_run():
    recs = tuple(TraceRecord(float(i), 0.5) for i in range(10))
    r = run(SimConfig(1.0, TraceReplay(recs, loop=False), Empirical(), max_packets=1000, warmup=0.0))
    assert r.stop_reason == "end_of_trace"
    assert r.ds.n_delivered == 10
    assert np.allclose(r.ds.delays, 0.5)


def test_empty_result():
    recs = (TraceRecord(50.0, 1.0),)
    with pytest.raises(EmptyResultError):
        run(SimConfig(1.0, TraceReplay(recs, loop=False), Empirical(), max_time=10.0))


def test_stadia_trace_runs():
    tr = stadia_trace("1080p", duration=5.0, seed=1)
    r = run(SimConfig(100e6, TraceReplay(tuple(tr)), Empirical(), max_time=12.0, seed=1))
    assert r.ds.n_arrived > 2 * len(tr)
    assert r.ds.mean_iat == pytest.approx(1 / 3057, rel=0.05)


class TestDelayDistribution:
    def test_cdf_single(self):
        assert delay_cdf(fake_result([2.0]), DS, [1, 2, 3]).tolist() == [0, 1, 1]

    def test_cdf_quartiles(self):
        assert delay_cdf(fake_result([1, 2, 3, 4]), DS, [2.5]).tolist() == [0.5]

    def test_percentiles(self):
        assert delay_percentile(fake_result(range(1, 101)), DS, 0.9) == 90
        assert delay_percentile(fake_result([1, 2, 3]), DS, 0.5) == 2
        with pytest.raises(InvalidArgumentError):
            nearest_rank(np.array([1.0]), 1.0)

    def test_empty(self):
        with pytest.raises(EmptyResultError):
            delay_percentile(fake_result([]), DS, 0.5)

    def test_mm1_cdf_and_quantile(self):
        r = run(mg1_config(0.5, cv=1.0, max_packets=1_000_000, seed=8))
        grid = np.linspace(0, 10, 201)
        emp = delay_cdf(r, DS, grid)
        assert np.all(np.diff(emp) >= 0) and emp[-1] <= 1
        assert np.max(np.abs(emp - (1 - np.exp(-0.5 * grid)))) < 0.01
        assert delay_percentile(r, DS, 0.9) == pytest.approx(-math.log(0.1) / 0.5, rel=0.03)


def test_export_packets():
    r = run(mg1_config(0.3, 0.2, max_packets=200, warmup=0.0, seed=1))
    buf = io.StringIO()
    export_packets(r, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "flow,arrival_s,departure_s,delay_s"
    assert len(lines) == 201
    flow, a, d, dl = lines[1].split(",")
    assert flow in ("DS", "NDS")
    assert float(d) - float(a) == pytest.approx(float(dl), abs=1e-8)

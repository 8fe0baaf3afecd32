import io
import json
import math

import numpy as np
import pytest

from llrlink import analytics as qa
from llrlink.allocator import (
    GridTooShortError,
    SweepConfig,
    compare_strategies,
    empirical_max_alloc,
    empirical_pfll,
    percentile_impact,
    refine_argmax,
    run_sweep,
)
from llrlink.analytics import ServiceModel
from llrlink.errors import OutOfRegionError, SweepError
from llrlink.sim import mg1_config


class TestSweepConfig:
    def test_step_grid(self):
        g = SweepConfig(stop=0.5, step=0.1).grid()
        assert np.allclose(g, [0, 0.1, 0.2, 0.3, 0.4, 0.5])

    def test_point_grid(self):
        assert len(SweepConfig(stop=1.0, points=7).grid()) == 7

    def test_three_points_too_short(self):
        with pytest.raises(GridTooShortError):
            SweepConfig(stop=0.2, step=0.1).grid()

    def test_bad_step(self):
        with pytest.raises(SweepError):
            SweepConfig(stop=1.0, step=0.0).grid()


class TestRefineArgmax:
    def test_exact_parabola(self):
        x = np.linspace(0, 1, 11)
        y = -(x - 0.43) ** 2
        xv, yv = refine_argmax(x, y)
        assert xv == pytest.approx(0.43, abs=1e-12)
        assert yv == pytest.approx(0.0, abs=1e-12)

    def test_uneven_spacing(self):
        x = np.array([0.0, 0.2, 0.5, 0.55, 1.0])
        y = -(x - 0.5) ** 2 + 3
        assert refine_argmax(x, y)[0] == pytest.approx(0.5, abs=1e-12)

    def test_edge_max_not_refined(self):
        assert refine_argmax([0, 1, 2, 3, 4], [5, 4, 3, 2, 1]) == (0.0, 5.0)

    def test_stays_in_bracket(self):
        xv, _ = refine_argmax([0, 1, 2, 3, 4], [0, 1, 3, 2.99, 0])
        assert 1 <= xv <= 3


class TestCompareStrategies:
    def test_deterministic_service(self):
        dr, tr = compare_strategies(0.05, ServiceModel(1.0, 0.0))
        assert dr == pytest.approx(5.40, abs=0.01)
        assert tr == pytest.approx(1.16, abs=0.01)

    def test_exponential(self):
        dr, tr = compare_strategies(0.1, ServiceModel(1.0, 1.0))
        assert dr == pytest.approx(3.0, rel=1e-12)
        assert tr == pytest.approx(0.8 / 0.6, rel=1e-12)

    @pytest.mark.parametrize("cv", [0.0, 0.5, 1.0, 2.0])
    def test_ratios_at_least_one(self, cv):
        svc = ServiceModel(1.0, cv)
        for ls in np.linspace(0.01, 0.98, 40) * qa.llr_limit(svc):
            dr, tr = compare_strategies(ls, svc)
            assert dr >= 1 and tr >= 1

    def test_throughput_ratio_grows_near_boundary(self):
        svc = ServiceModel(1.0, 1.0)
        ls = 0.5 - np.logspace(-1, -6, 20)
        tr = [compare_strategies(x, svc)[1] for x in ls]
        assert np.all(np.diff(tr) > 0)
        # both allocations vanish together; for C_S=1 the ratio tends to 2
        assert tr[-1] == pytest.approx(2.0, rel=1e-4)

    def test_boundary_undefined(self):
        with pytest.raises(OutOfRegionError):
            compare_strategies(0.5, ServiceModel(1.0, 1.0))


class TestEmpiricalMax:
    def test_mm1_quarter(self):
        base = mg1_config(0.25, cv=1.0, seed=3)
        got = empirical_max_alloc(base, SweepConfig(stop=0.7, step=0.05, packets_per_point=400_000))
        assert got == pytest.approx(0.5, rel=0.05)

    def test_at_limit_near_zero(self):
        base = mg1_config(0.5, cv=1.0, seed=3)
        try:
            got = empirical_max_alloc(base, SweepConfig(stop=0.4, step=0.02, packets_per_point=400_000))
        except OutOfRegionError:
            return
        assert got < 0.03

    def test_outside_llr(self):
        base = mg1_config(0.6, cv=1.0, seed=1)
        with pytest.raises(OutOfRegionError, match="outside the LLR"):
            empirical_max_alloc(base, SweepConfig(stop=0.3, step=0.05, packets_per_point=100_000))

    def test_grid_too_short(self):
        base = mg1_config(0.1, cv=1.0, seed=1)
        with pytest.raises(GridTooShortError):
            empirical_max_alloc(base, SweepConfig(stop=0.4, step=0.1, packets_per_point=50_000))


@pytest.fixture(scope="module")
def report():
    base = mg1_config(0.1, cv=1.0, seed=7)
    return empirical_pfll(base, SweepConfig(stop=0.86, step=0.04, packets_per_point=300_000))


class TestEmpiricalPfll:
    def test_close_to_analytic(self, report):
        assert report.analytic_pfll == pytest.approx(0.6)
        assert report.analytic_max == pytest.approx(0.8)
        assert report.empirical_pfll == pytest.approx(0.6, rel=0.05)
        assert report.empirical_max == pytest.approx(0.8, rel=0.05)

    def test_f_and_g_agree(self, report):
        assert abs(report.empirical_pfll - report.argmax_g) <= 0.04

    def test_orderings(self, report):
        assert report.empirical_pfll <= report.empirical_max
        tol = report.noise_tolerance
        assert report.delay_at_zero <= report.delay_at_pfll + tol
        assert report.delay_at_pfll <= report.delay_at_max + tol

    def test_curve_ends(self, report):
        assert report.f_curve.values[0] == 0.0 and report.f_curve.values[-1] == 0.0
        assert report.g_curve.values[0] == 0.0
        assert report.f_curve.lambda_b_grid[-1] == report.empirical_max
        assert abs(report.g_curve.values[-1]) < 0.1

    def test_json(self, report):
        buf = io.StringIO()
        report.write_json(buf)
        d = json.loads(buf.getvalue())
        assert d["empirical_pfll"] == report.empirical_pfll
        assert len(d["curves"]["f_hat"]) == len(report.f_curve.values)
        assert max(d["curves"]["f_hat"]) == pytest.approx(1.0)

    def test_curves_csv(self, report):
        buf = io.StringIO()
        report.write_curves(buf)
        lines = buf.getvalue().split("\n")
        assert lines[0] == "lambda_b,g_hat,f_hat,mean_delay_s"
        assert len(lines) == len(report.f_curve.values) + 2 and lines[-1] == ""


def test_sweep_points_share_ds_stream():
    base = mg1_config(0.1, cv=1.0, seed=2)
    pts = run_sweep(base, SweepConfig(stop=0.4, step=0.1, time_per_point=2000.0, packets_per_point=None))
    assert len({round(p.ds_mean_iat, 12) for p in pts}) == 1
    assert all(b.mean_delay > a.mean_delay for a, b in zip(pts, pts[1:]))


def test_parallel_matches_serial():
    base = mg1_config(0.1, cv=0.0, seed=2)
    s1 = SweepConfig(stop=0.4, step=0.1, packets_per_point=20_000)
    s2 = SweepConfig(stop=0.4, step=0.1, packets_per_point=20_000, workers=2)
    assert run_sweep(base, s1) == run_sweep(base, s2)


def test_percentile_impact():
    base = mg1_config(0.5, cv=1.0, seed=4, max_packets=400_000)
    rows = percentile_impact(base, [0.0, 0.1, 0.2])
    assert rows[0]["lambda_b"] == 0.0
    assert rows[0]["p90"] == pytest.approx(-math.log(0.1) / 0.5, rel=0.03)
    p90 = [r["p90"] for r in rows]
    assert p90[0] < p90[1] < p90[2]
    for r in rows:
        assert r["p50"] <= r["p90"] <= r["p99"]

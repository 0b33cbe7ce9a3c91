import numpy as np
import pytest

from perfhom.config import from_dict
from perfhom.expansion import RateFit, RateReport
from perfhom.geometry import band_half_width
from perfhom.study import (CONCLUSION_DEFAULTS, ERROR_COLUMNS, PointResult, conclusion_scenario, run_conclusion,
                           run_point, study_checks)

EPS = 0.0625


@pytest.fixture(scope="module")
def point(desk):
    return run_point(desk, EPS, keep_runs=True)


def test_point_has_every_column(point):
    assert set(ERROR_COLUMNS) <= set(point.errors)
    assert all(np.isfinite(v) and v >= 0 for v in point.errors.values())


def test_point_stats(point, desk):
    s = point.stats
    assert s["band"] == pytest.approx(band_half_width(EPS, desk.geometry.d))
    assert s["steps"] == round(desk.run.T / desk.run.dt)
    for key in ("micro_balance", "limit_balance", "outer_balance", "corrector_balance"):
        assert s[key] <= desk.run.tolerances.mass_balance
    assert s["micro_max"] > 0


def test_F_outside_band_is_outer_plus_scaled_corrector(point):
    b = point.runs["bundle"]
    k = len(point.runs["ref"].times) // 3
    F = b.assemble_F(k)
    expect = b._sample(b.outer, k) + b.log_factor * b._sample(b.corrector, k)
    np.testing.assert_allclose(F[~b.band], expect[~b.band], rtol=0, atol=1e-14)


def test_H_outside_band_is_outer(point):
    b = point.runs["bundle"]
    k = len(point.runs["ref"].times) - 1
    np.testing.assert_array_equal(b.assemble_H(k)[~b.band], b._sample(b.outer, k)[~b.band])


def test_log_factor(point, desk):
    b = point.runs["bundle"]
    assert b.log_factor == pytest.approx(desk.geometry.d * EPS * np.log(1 / EPS))


def test_zero_data_gives_zero_expansions(desk):
    d = desk.to_dict()
    d["source"]["pulse"]["amplitude"] = 0.0
    d["run"]["T"] = 0.15
    p = run_point(from_dict(d), EPS, keep_runs=True)
    b = p.runs["bundle"]
    for k in range(len(p.runs["ref"].times)):
        assert np.max(np.abs(b.assemble_F(k))) == 0.0
        assert np.max(np.abs(b.assemble_H(k))) == 0.0
    assert p.errors["F_l2h1"] == 0.0 and p.errors["limit_l2h1"] == 0.0


def test_conclusion_scenario_parameters(desk):
    sc, o = conclusion_scenario(desk, 0.03125)
    assert o == CONCLUSION_DEFAULTS
    np.testing.assert_allclose(sc.tensor().A1, 0.01 * sc.tensor().A2)
    assert sc.run.dt == pytest.approx(o["t_m"] / 10)
    assert sc.run.T == pytest.approx(6 * o["t_m"])
    assert sc.source.pulse.amplitude == 10.0


def test_conclusion_band_term_dominates_then_recedes(desk):
    res = run_conclusion(desk, EPS)
    assert res.pulse_steps.size == CONCLUSION_DEFAULTS["steps_per_pulse"]
    assert res.dominates_during_pulse
    assert res.recedes_after
    assert res.passed


def test_study_checks_flag_failed_rates():
    errs = dict(limit_l2h1=1.0, outer_linf_l2=1.0, H_l2h1=1.0, F_l2h1=1.0, outer_l2h1=1.0, band_H_l2h1=1.0,
                band_outer_l2h1=2.0, F_linf_l2=1.0)
    stats = dict(micro_max=1.0, micro_l2h1=1.0, interp_error=0.0)
    points = [PointResult(e, dict(errs), dict(stats)) for e in (0.1, 0.05, 0.025)]
    rates = RateReport([0.1, 0.05, 0.025], {}, fits=dict(limit_l2h1=RateFit(0.1, 1.0), outer_linf_l2=RateFit(2.0, 1.0)))
    checks = study_checks(points, rates)
    assert not checks["rate_limit_l2h1"]["passed"]
    assert checks["rate_outer_linf_l2"]["passed"]

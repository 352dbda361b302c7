import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockweak.core import RngSpec
from blockweak.thresholds import (GbarSample, ThresholdError, _h, alpha_weak, curve_to_csv,
                                  finite_n_alpha_estimate, sample_gbar, solve_theta,
                                  theta_residual, threshold_curve, waterfill,
                                  waterfill_identity_value)


def _table(oracle, beta=None, d=None):
    return [r for r in oracle["threshold_table"]
            if (beta is None or r["beta"] == beta) and (d is None or r["d"] == d)]


def test_residual_value(oracle):
    assert theta_residual(0.5, 0.2, 1) == pytest.approx(oracle["residual_0_5_0_2_1"], abs=1e-12)


def test_residual_signs_at_ends():
    for beta in (0.05, 0.5, 0.95):
        for d in (1, 3, 8):
            assert theta_residual(beta + 1e-6, beta, d) < 0 < theta_residual(1.0, beta, d)


def test_residual_domain():
    with pytest.raises(ValueError):
        theta_residual(0.1, 0.2, 1)
    with pytest.raises(ValueError):
        theta_residual(0.5, 0.2, 1, complement=0.1)


def test_theta_matches_oracle(oracle):
    r1 = _table(oracle, 0.2, 1)[0]
    r4 = _table(oracle, 0.2, 4)[0]
    assert solve_theta(0.2, 1) == pytest.approx(r1["theta_hat"], abs=1e-10)
    assert solve_theta(0.2, 4) == pytest.approx(r4["theta_hat"], abs=1e-10)
    assert abs(r1["theta_hat"] - r4["theta_hat"]) > 0.05


def test_alpha_matches_oracle_everywhere(oracle):
    for r in oracle["threshold_table"]:
        p = alpha_weak(r["beta"], r["d"])
        assert p.alpha_w == pytest.approx(r["alpha_w"], abs=1e-9), r
        assert p.theta_hat == pytest.approx(r["theta_hat"], abs=1e-9), r


def test_alpha_decreasing_in_d(oracle):
    seq = [alpha_weak(0.2, d).alpha_w for d in (1, 2, 4, 8)]
    assert all(a > b for a, b in zip(seq, seq[1:]))
    assert seq == pytest.approx([_table(oracle, 0.2, d)[0]["alpha_w"] for d in (1, 2, 4, 8)],
                                abs=1e-9)


def test_d1_theta_equals_alpha():
    for beta in (0.1, 0.4, 0.7):
        p = alpha_weak(beta, 1)
        assert p.alpha_w == pytest.approx(p.theta_hat, abs=1e-12)


def test_beta_one_convention():
    p = alpha_weak(1.0, 3)
    assert (p.alpha_w, p.theta_hat) == (1.0, 1.0)


@pytest.mark.parametrize("beta,d", [(0.0, 1), (-0.1, 1), (1.2, 2), (0.3, 0), (float("nan"), 1)])
def test_alpha_domain(beta, d):
    with pytest.raises((ValueError, TypeError)):
        alpha_weak(beta, d)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.98), st.integers(1, 16))
def test_threshold_properties(beta, d):
    p = alpha_weak(beta, d)
    assert beta < p.theta_hat <= 1.0
    assert beta < p.alpha_w <= 1.0
    assert p.alpha_w <= p.theta_hat + 1e-12
    assert abs(theta_residual(p.theta_hat, beta, d, complement=p.theta_complement)) <= 1e-10


def test_curve_monotone_and_ordered(oracle):
    grid = np.linspace(0.01, 0.99, 99)
    curves = {d: np.array([p.alpha_w for p in threshold_curve(d, grid)]) for d in (1, 8)}
    assert np.all(np.diff(curves[1]) > 0)
    assert np.all(curves[8] < curves[1])
    for beta in (0.05, 0.1, 0.3, 0.5, 0.8):
        for d in (1, 8):
            ref = _table(oracle, beta, d)[0]["alpha_w"]
            assert alpha_weak(beta, d).alpha_w == pytest.approx(ref, abs=1e-9)


def test_curve_rejects_bad_grid():
    for grid in ([], [0.3, 0.2], [0.0, 0.5], [0.5, 1.0]):
        with pytest.raises(ValueError):
            threshold_curve(2, grid)


def test_curve_csv_round_trip():
    pts = threshold_curve(2, [0.1, 0.3])
    rows = list(csv.DictReader(io.StringIO(curve_to_csv(pts))))
    assert [float(r["alpha_w"]) for r in rows] == [p.alpha_w for p in pts]
    assert list(rows[0]) == ["d", "beta", "theta_hat", "alpha_w"]


# ---------------------------------------------------------------- water-filling

def _oracle_sample(oracle):
    w = oracle["waterfill"]
    return GbarSample(n=w["n"], k=w["k"], d=w["d"], sorted_free=np.array(w["sorted_free"]),
                      support_first=np.array(w["support_first"]),
                      support_rest=np.array(w["support_rest"])), w


def test_waterfill_matches_brute_force(oracle):
    sample, w = _oracle_sample(oracle)
    res = waterfill(sample)
    assert res.f_value == pytest.approx(w["f_value"], rel=1e-9)
    assert res.s_star == pytest.approx(w["s_star"], abs=1e-7)
    assert res.m_w_estimate == pytest.approx(res.f_value / 3)


def test_waterfill_identity_on_oracle_sample(oracle):
    sample, _ = _oracle_sample(oracle)
    res = waterfill(sample)
    assert res.s_star > 0
    assert waterfill_identity_value(sample, res.c_w) == pytest.approx(res.f_value, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(1, 5), st.data())
def test_waterfill_is_global_minimum(n, d, data):
    k = data.draw(st.integers(0, n - 1))
    seed = data.draw(st.integers(0, 2 ** 32))
    sample = sample_gbar(n, k, d, RngSpec(seed))
    res = waterfill(sample)
    assert res.s_star >= 0.0
    grid = np.linspace(0.0, sample.gbar.max() + 1.0, 2001)
    assert res.f_value <= min(_h(sample, s) for s in grid) + 1e-10
    assert res.f_value <= _h(sample, res.s_star * (1 + 1e-6) + 1e-9) + 1e-12
    if res.s_star > 0:
        assert waterfill_identity_value(sample, res.c_w) == pytest.approx(res.f_value,
                                                                           rel=1e-9, abs=1e-12)


def test_sample_layout():
    s = sample_gbar(10, 3, 4, RngSpec(1))
    assert s.gbar.shape == (13,)
    assert np.all(np.diff(s.sorted_free) >= 0)
    with pytest.raises(ValueError):
        GbarSample(n=3, k=1, d=2, sorted_free=np.array([2.0, 1.0]),
                   support_first=np.zeros(1), support_rest=np.zeros(1))


def test_finite_n_deterministic_and_close():
    a = finite_n_alpha_estimate(4000, 800, 2, 3, RngSpec(5))
    b = finite_n_alpha_estimate(4000, 800, 2, 3, RngSpec(5))
    assert a == b
    assert a["mean"] == pytest.approx(alpha_weak(0.2, 2).alpha_w, rel=0.05)
    assert a["max_identity_rel_err"] <= 1e-9


def test_finite_n_rejects_zero_samples():
    with pytest.raises(ValueError):
        finite_n_alpha_estimate(10, 2, 1, 0)


def test_solve_theta_reports_missing_bracket(monkeypatch):
    import blockweak.thresholds as th
    monkeypatch.setattr(th, "_residual", lambda q, beta, d: -1.0)
    with pytest.raises(ThresholdError):
        th.solve_theta(0.3, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 400), st.integers(1, 6), st.data())
def test_waterfill_stationarity(n, d, data):
    k = data.draw(st.integers(1, n - 1))
    sample = sample_gbar(n, k, d, RngSpec(data.draw(st.integers(0, 2 ** 32))))
    res = waterfill(sample)
    if res.s_star > 0:
        g = sample.sorted_free
        rhs = g[res.c_w:].sum() + sample.support_first.sum()
        assert res.s_star * (n - res.c_w) == pytest.approx(rhs, rel=1e-10, abs=1e-12)
    assert res.c_w == np.count_nonzero(sample.sorted_free <= res.s_star)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmkv.coefficients import (MeasureView, PeriodicCoefficients, Tabulation, b0_gradient_norm, builtin_scenarios,
                               double_well_slope, eval_drift, eval_sigma, example41, example41_lyapunov_constants,
                               get_scenario, lyapunov_exp, sample_period, scenario_from_dict, scenario_names)
from pmkv.errors import ScenarioError


def test_ou_drift_at_phase_zero():
    scn = get_scenario("ou-periodic", dim=2)
    view = MeasureView(np.zeros((3, 2)))
    assert np.allclose(eval_drift(scn.coeffs, 0.0, np.array([2.0, 0.0]), view), [-2.0, 0.0])


def test_granular_drift_at_the_mean():
    scn = get_scenario("granular-periodic", dim=2, eps=0.3)
    pts = np.array([[1.0, 2.0], [3.0, -1.0], [-1.0, 5.0]])
    view = MeasureView(pts)
    m = pts.mean(axis=0)
    assert np.allclose(eval_drift(scn.coeffs, 0.0, m, view), -m)
    x = np.array([0.5, 0.5])
    assert np.allclose(eval_drift(scn.coeffs, 0.0, x, view), -x - 0.3 * (x - m))


def test_example41_drift_without_interaction():
    scn = example41(p=1.0, eps=0.0, amplitude=1.0, dim=2)
    view = MeasureView(np.zeros((2, 2)))
    # alpha_t = 1 + sin(pi / 2) = 2
    assert np.allclose(eval_drift(scn.coeffs, 0.25, np.array([3.0, 0.0]), view), [-6.0, 0.0])


def test_sigma_examples():
    scn = get_scenario("granular-periodic", dim=3)
    for t, x in [(0.0, [0.0, 0.0, 0.0]), (0.37, [5.0, -2.0, 1.0]), (12.9, [1e3, 0.0, -1.0])]:
        assert np.allclose(eval_sigma(scn.coeffs, t, np.array(x)), math.sqrt(2.0) * np.eye(3))
    # sigma = sqrt(alpha_t) with alpha_{1/4} = 1 + 3 = 4
    e31 = get_scenario("example31-double-well", amplitude=3.0)
    assert np.allclose(eval_sigma(e31.coeffs, 0.25, np.array([0.7])), 2.0 * np.eye(1))


def test_catalog_lookup():
    assert get_scenario("ou-periodic").oracle == "gaussian-moment-ode"
    scn = get_scenario("granular-periodic")
    t, g = sample_period(scn.coeffs.constants["gamma"], scn.period)
    assert np.trapezoid(g, t) > 0
    with pytest.raises(ScenarioError) as err:
        get_scenario("no-such-scenario")
    for name in scenario_names():
        assert name in str(err.value)
    assert len(builtin_scenarios()) == len(scenario_names())


def test_catalog_covers_required_families():
    names = set(scenario_names())
    assert {"ou-periodic", "granular-periodic", "example31-double-well", "example41-nondissipative"} <= names
    assert any("ball" in n for n in names) and any("box" in n for n in names)


def test_granular_convexity_condition():
    scn = get_scenario("granular-periodic")
    c = scn.coeffs.constants
    t = np.linspace(0.0, 1.0, 101)
    assert np.all(c["hess_lower"](t) >= c["gamma"](t) + c["interaction_norm"](t) - 1e-12)


def test_periodicity_of_coefficients():
    for scn in builtin_scenarios():
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(8, scn.dim))
        view = MeasureView(pts)
        for t in (0.1, 0.63):
            a = eval_drift(scn.coeffs, t, pts, view)
            b = eval_drift(scn.coeffs, t + 3 * scn.period, pts, view)
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12), scn.name


def test_nonfinite_drift_is_reported():
    coeffs = PeriodicCoefficients(1.0, 1, lambda t, x, v: np.full_like(x, np.nan), lambda t, x: 1.0)
    with pytest.raises(ScenarioError, match="non-finite drift"):
        eval_drift(coeffs, 0.5, np.array([1.0]), MeasureView(np.zeros((1, 1))))
    bad_sigma = PeriodicCoefficients(1.0, 1, lambda t, x, v: -x, lambda t, x: np.nan)
    with pytest.raises(ScenarioError):
        eval_sigma(bad_sigma, 0.0, np.array([1.0]))
    with pytest.raises(ScenarioError):
        PeriodicCoefficients(0.0, 1, lambda t, x, v: -x, lambda t, x: 1.0)


def test_double_well_slope_shape():
    th1, th2, R = 1.0, 2.0, 1.5
    x = np.linspace(-4.0, 4.0, 80001)
    u1 = double_well_slope(x, th1, th2, R)
    assert np.allclose(u1, -double_well_slope(-x, th1, th2, R))
    u2 = np.gradient(u1, x)
    inner = np.abs(x) < R / 2 - 0.01
    outer = np.abs(x) > R / 2 + 0.01
    assert np.allclose(u2[inner], -th1, atol=1e-6)
    assert np.allclose(u2[outer], th2, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(p=st.sampled_from([0.5, 1.0, 1.5, 2.0]), smooth=st.booleans(),
       x=st.lists(st.floats(-2.5, 2.5), min_size=2, max_size=2))
def test_lyapunov_gradient_matches_finite_differences(p, smooth, x):
    x = np.array(x)
    if np.linalg.norm(x) < 0.05:
        return
    V, grad = lyapunov_exp(p, smooth)
    h = 1e-6
    fd = np.array([(V(x + h * e) - V(x - h * e)) / (2 * h) for e in np.eye(2)])
    assert np.allclose(grad(x), fd, rtol=1e-6, atol=1e-6)


def test_example41_lyapunov_inequality_on_a_line():
    # L V <= alpha (theta0 - theta1 V) without interaction, checked by finite differences in 1-D
    p = 1.0
    theta0 = example41_lyapunov_constants(p, eps=0.0, theta1=1.0, dim=1)
    V, grad = lyapunov_exp(p)
    scn = example41(p=p, eps=0.0)
    x = np.linspace(-6.0, 6.0, 2401)
    h = 1e-4
    Vxx = (V(x[:, None] + h) - 2 * V(x[:, None]) + V(x[:, None] - h)) / h ** 2
    b0 = eval_drift(scn.coeffs, 0.0, x[:, None], MeasureView(np.zeros((1, 1))))[:, 0]
    LV = 0.5 * Vxx + b0 * grad(x[:, None])[:, 0]
    assert np.all(LV <= theta0 - V(x[:, None]) + 1e-4 * V(x[:, None]))


def test_b0_gradient_bound():
    for p in (0.5, 1.0, 2.0):
        bound = b0_gradient_norm(p)
        x = np.linspace(-8.0, 8.0, 16001)
        scn = example41(p=p, eps=0.0, amplitude=0.0)
        b = eval_drift(scn.coeffs, 0.0, x[:, None], MeasureView(np.zeros((1, 1))))[:, 0]
        slope = np.abs(np.diff(b) / np.diff(x))
        assert slope.max() <= bound + 1e-6


def test_measure_view_interaction_is_blocking_invariant():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(700, 2))
    view = MeasureView(pts)

    def kernel(xi, yj):
        return xi - yj

    full = view.interaction(pts, kernel)
    assert np.allclose(full, pts - pts.mean(axis=0))
    part = np.concatenate([view.interaction(pts[i:i + 97], kernel) for i in range(0, 700, 97)])
    assert np.array_equal(part, full)
    sub = MeasureView(pts, sample_index=np.arange(0, 700, 7))
    assert np.allclose(sub.mean_position(), pts[::7].mean(axis=0))


def test_tabulation_is_periodic_and_linear():
    tab = Tabulation([0.0, 2.0, 0.0], 2.0)
    assert tab(0.5) == pytest.approx(1.0)
    assert tab(4.5) == pytest.approx(1.0)
    with pytest.raises(ScenarioError):
        Tabulation([1.0], 1.0)


def test_inline_scenario():
    scn = scenario_from_dict({"dim": 2, "confinement": [1.0, 3.0, 1.0], "interaction": 0.5,
                              "center": [1.0, 0.0], "domain": {"kind": "ball", "center": [0, 0], "radius": 2},
                              "constants": {"K1": -2.0, "K2": 0.0}})
    pts = np.array([[0.0, 0.0], [2.0, 0.0]])
    view = MeasureView(pts)
    x = np.array([0.0, 1.0])
    expected = -3.0 * (x - [1.0, 0.0]) - 0.5 * (x - pts.mean(axis=0))
    assert np.allclose(eval_drift(scn.coeffs, 0.5, x, view), expected)
    assert scn.coeffs.constant("K1", 0.3) == -2.0
    with pytest.raises(ScenarioError):
        scenario_from_dict({"family": "cubic"})

import numpy as np
import pytest

from oracles import ou_euler_moments, ou_euler_periodic_variance, ou_moments, ou_rate
from pmkv.coefficients import PeriodicCoefficients, Scenario, get_scenario, scenario_from_dict
from pmkv.engine import (Ensemble, SimConfig, coupled_simulate, evolve, optimal_relabel, periodic_fixed_point,
                         sample_initial, simulate, step)
from pmkv.errors import BlowUpError, NonConvergenceError, SimConfigError
from pmkv.geometry import Ball, HalfSpaces, WholeSpace
from pmkv.noise import NoisePolicy
from pmkv.transport import ot_exact


def frozen(dim=1, domain=None):
    coeffs = PeriodicCoefficients(1.0, dim, lambda t, x, v: np.zeros_like(x), lambda t, x: 0.0)
    return Scenario("frozen", coeffs, domain or WholeSpace(), {"kind": "point", "x": [0.5] * dim})


def test_zero_coefficients_leave_positions():
    scn = frozen(2)
    ens = Ensemble(np.array([[1.0, 2.0], [-3.0, 0.5]]))
    out = step(ens, scn.coeffs, WholeSpace(), 0.1, NoisePolicy(0))
    assert np.array_equal(out.positions, ens.positions)
    assert out.t == pytest.approx(0.1) and out.step_index == 1


def test_ou_euler_arithmetic():
    scn = get_scenario("ou-periodic")
    out = step(Ensemble(np.array([[1.0]])), scn.coeffs, WholeSpace(), 0.1, None)
    assert out.positions[0, 0] == pytest.approx(0.9, abs=1e-15)


def test_half_space_reflection():
    coeffs = PeriodicCoefficients(1.0, 1, lambda t, x, v: np.full_like(x, -10.0), lambda t, x: 0.0)
    dom = HalfSpaces(((-1.0,),), (0.0,))  # x >= 0
    out = step(Ensemble(np.array([[0.05]])), coeffs, dom, 0.1, None)
    assert out.positions[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert out.reflection[0] == pytest.approx(0.95)


def test_blow_up_is_an_error():
    coeffs = PeriodicCoefficients(1.0, 1, lambda t, x, v: 1e308 * np.ones_like(x), lambda t, x: 0.0)
    with pytest.raises(BlowUpError, match="particle 0"):
        step(Ensemble(np.array([[1e308]])), coeffs, WholeSpace(), 10.0, None)


def test_zero_periods_returns_initial():
    scn = get_scenario("ou-periodic")
    cfg = SimConfig.for_period(1.0, 10, periods=0, n=5)
    snaps = simulate(scn, cfg)
    assert len(snaps) == 1 and np.array_equal(snaps[0].positions, np.zeros((5, 1)))


def test_period_must_be_whole_number_of_steps():
    scn = get_scenario("ou-periodic")
    with pytest.raises(SimConfigError):
        simulate(scn, SimConfig(dt=0.003, steps_per_period=300, periods=1, n=2))


def test_ou_snapshot_moments_match_oracle():
    scn = get_scenario("ou-periodic")
    n, steps, periods = 10_000, 1000, 2
    cfg = SimConfig.for_period(1.0, steps, periods=periods, n=n, seed=4)
    init = Ensemble(np.full((n, 1), 3.0))
    snaps = simulate(scn, cfg, init)
    m_em, v_em = ou_euler_moments(3.0, 0.0, periods, steps)
    m_ode, v_ode = ou_moments(3.0, 0.0, periods)
    for p in range(1, periods + 1):
        x = snaps[p].positions[:, 0]
        se_m = np.sqrt(v_em[p] / n)
        se_v = v_em[p] * np.sqrt(2.0 / n)
        assert abs(x.mean() - m_em[p]) <= 4 * se_m
        assert abs(x.var() - v_em[p]) <= 4 * se_v
        # the scheme's own bias against the exact dynamics is well below the sampling error
        assert abs(m_em[p] - m_ode[p]) < se_m and abs(v_em[p] - v_ode[p]) < se_v


def test_ball_confinement_every_snapshot():
    scn = get_scenario("granular-periodic-ball")
    cfg = SimConfig.for_period(1.0, 100, periods=3, n=300, seed=2)
    init = sample_initial({"kind": "uniform"}, 300, 2, scn.domain, NoisePolicy(1))
    for s in simulate(scn, cfg, init):
        assert np.all(scn.domain.contains(s.positions))
    assert np.all(s.reflection > 0)


def test_coupled_identical_initial_ensembles_stay_identical():
    scn = get_scenario("granular-periodic")
    cfg = SimConfig.for_period(1.0, 50, periods=3, n=64)
    init = sample_initial({"kind": "gaussian", "std": 2.0}, 64, 2, None, NoisePolicy(3))
    for a, b in coupled_simulate(init, init.copy(), scn, cfg):
        assert np.array_equal(a.positions, b.positions)


def test_coupled_noiseless_linear_contraction():
    # a(t) = 1 + 0.5 sin(2 pi t), no noise: the gap follows prod (1 - a_k dt) <= exp(-int a)
    scn = scenario_from_dict({"dim": 1, "confinement": list(ou_rate(np.linspace(0, 1, 1001))), "noise": 0.0})
    steps = 1000
    cfg = SimConfig.for_period(1.0, steps, periods=3, n=3)
    a = Ensemble(np.array([[1.0], [-2.0], [0.3]]))
    b = Ensemble(np.array([[2.0], [0.0], [0.3]]))
    pairs = coupled_simulate(a, b, scn, cfg)
    factor = np.prod([1.0 - ou_rate(k / steps) / steps for k in range(steps)])
    assert factor <= np.exp(-1.0)
    for (a0, b0), (a1, b1) in zip(pairs[:-1], pairs[1:]):
        gap0 = np.abs(a0.positions - b0.positions)[:, 0]
        gap1 = np.abs(a1.positions - b1.positions)[:, 0]
        assert np.allclose(gap1, factor * gap0, rtol=1e-6, atol=1e-15)


def test_granular_without_interaction_is_ou():
    gran = get_scenario("granular-periodic", eps=0.0)
    ou = get_scenario("ou-periodic", dim=2)
    cfg = SimConfig.for_period(1.0, 40, periods=2, n=32, seed=6)
    a = sample_initial({"kind": "gaussian", "std": 1.0}, 32, 2, None, NoisePolicy(1))
    b = sample_initial({"kind": "gaussian", "mean": [1.0, 1.0]}, 32, 2, None, NoisePolicy(2))
    for (ga, gb), (oa, ob) in zip(coupled_simulate(a, b, gran, cfg), coupled_simulate(a, b, ou, cfg)):
        assert np.allclose(ga.positions, oa.positions, rtol=0, atol=1e-13)
        assert np.allclose(gb.positions, ob.positions, rtol=0, atol=1e-13)


def test_coupled_shape_mismatch():
    scn = get_scenario("ou-periodic")
    cfg = SimConfig.for_period(1.0, 10, periods=1, n=3)
    with pytest.raises(SimConfigError):
        coupled_simulate(Ensemble(np.zeros((3, 1))), Ensemble(np.zeros((4, 1))), scn, cfg)


@pytest.mark.parametrize("workers", [2, 8])
def test_worker_count_does_not_change_results(workers):
    scn = get_scenario("granular-periodic-ball")
    init = sample_initial({"kind": "uniform"}, 257, 2, scn.domain, NoisePolicy(5))
    base = simulate(scn, SimConfig.for_period(1.0, 20, periods=2, n=257, seed=9), init)
    par = simulate(scn, SimConfig.for_period(1.0, 20, periods=2, n=257, seed=9, workers=workers), init)
    for s, p in zip(base, par):
        assert np.array_equal(s.positions, p.positions) and np.array_equal(s.reflection, p.reflection)


def test_subsampled_interaction_is_deterministic():
    scn = get_scenario("granular-periodic")
    cfg = SimConfig.for_period(1.0, 10, periods=1, n=200, subsample=50, seed=3)
    init = sample_initial({"kind": "gaussian"}, 200, 2, None, NoisePolicy(1))
    a = simulate(scn, cfg, init)[-1]
    b = simulate(scn, SimConfig.for_period(1.0, 10, periods=1, n=200, subsample=50, seed=3, workers=4), init)[-1]
    assert np.array_equal(a.positions, b.positions)


def test_mean_field_symmetry_under_relabelling():
    scn = get_scenario("granular-periodic")
    cfg = SimConfig.for_period(1.0, 20, periods=2, n=100, seed=8)
    init = sample_initial({"kind": "gaussian", "std": 1.5}, 100, 2, None, NoisePolicy(4))
    perm = np.random.default_rng(0).permutation(100)
    base = simulate(scn, cfg, init, NoisePolicy(8))
    # noise keys travel with the particles: relabelled particle j uses key perm[j]
    moved = simulate(scn, cfg, Ensemble(init.positions[perm]), NoisePolicy(8, index_map=tuple(perm)))
    for s, m in zip(base, moved):
        assert np.allclose(m.positions, s.positions[perm], rtol=0, atol=1e-12)
        assert np.allclose(np.sort(m.positions, axis=0), np.sort(s.positions, axis=0), rtol=0, atol=1e-12)
        assert np.allclose(np.cov(m.positions.T), np.cov(s.positions.T), rtol=1e-10)


def test_fixed_point_of_frozen_dynamics_in_one_period():
    scn = frozen(1)
    cfg = SimConfig.for_period(1.0, 10, periods=1, n=20)
    res = periodic_fixed_point(scn, cfg, 1e-9, m_consec=1)
    assert res.periods == 1 and res.trace == [0.0]


def test_ou_fixed_point_variance():
    scn = get_scenario("ou-periodic")
    n, steps = 8000, 200
    cfg = SimConfig.for_period(1.0, steps, periods=4, n=n, seed=1)
    res = periodic_fixed_point(scn, cfg, "auto", m_consec=2)
    v_star = ou_euler_periodic_variance(steps)
    x = res.ensemble.positions[:, 0]
    assert abs(x.var() - v_star) <= 4 * v_star * np.sqrt(2.0 / n)
    assert abs(x.mean()) <= 4 * np.sqrt(v_star / n)


def test_granular_fixed_point_stopping_rule():
    scn = get_scenario("granular-periodic")
    cfg = SimConfig.for_period(1.0, 100, periods=4, n=1024, seed=2)
    eps_fix = 0.3
    res = periodic_fixed_point(scn, cfg, eps_fix, m_consec=2)
    nxt = evolve(res.ensemble, scn, cfg, cfg.steps_per_period)
    assert res.trace[-1] < eps_fix and res.trace[-2] < eps_fix
    assert ot_exact(res.ensemble, nxt, "w2").distance < eps_fix


def test_fixed_point_cap_reports_trace():
    scn = get_scenario("brownian-periodic")
    cfg = SimConfig.for_period(1.0, 20, periods=1, n=64)
    with pytest.raises(NonConvergenceError) as err:
        periodic_fixed_point(scn, cfg, 1e-6, m_consec=1, max_periods=3)
    assert len(err.value.trace) == 3 and err.value.last.n == 64
    with pytest.raises(SimConfigError):
        periodic_fixed_point(scn, cfg, "soon")


def test_optimal_relabel_minimises_pairwise_cost():
    rng = np.random.default_rng(2)
    a = Ensemble(rng.normal(size=(30, 2)))
    b = Ensemble(rng.normal(size=(30, 2)) + 1.0)
    r = optimal_relabel(a, b)
    paired = np.sqrt(np.mean(np.sum((a.positions - r.positions) ** 2, axis=1)))
    assert paired == pytest.approx(ot_exact(a, b, "w2").distance, rel=1e-12)
    assert sorted(map(tuple, r.positions)) == sorted(map(tuple, b.positions))


def test_initial_laws():
    ball = Ball((0.0, 0.0), 1.0)
    u = sample_initial({"kind": "uniform"}, 500, 2, ball, NoisePolicy(0))
    assert np.all(ball.contains(u.positions))
    g = sample_initial({"kind": "gaussian", "mean": [5.0], "std": 0.1}, 4000, 1, None, NoisePolicy(0))
    assert abs(g.positions.mean() - 5.0) < 0.01
    g2 = sample_initial({"kind": "gaussian", "mean": [5.0], "std": 0.1}, 4000, 1, None, NoisePolicy(0, stream=3))
    assert not np.array_equal(g.positions, g2.positions)
    with pytest.raises(Exception):
        sample_initial({"kind": "uniform"}, 5, 2, WholeSpace())

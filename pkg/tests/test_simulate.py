import math

import numpy as np
import pytest

from sampled_tracking import simulate as sim
from sampled_tracking.dcea import DceaConfig, EstimatorState, jump
from sampled_tracking.models import (RobotModel, example_disturbance, example_target,
                                     forward_dynamics, mass_matrix, model_bounds, static_target)
from sampled_tracking.stability import region_estimates
from sampled_tracking.topology import build_topology, paper_topology

PAPER = paper_topology()
MODELS = [RobotModel()] * 6


def example_run(seed=0, t_end=5.0, order="first", alpha=0.9, beta=1.1, h=0.1, **kw):
    cfg = DceaConfig.uniform(order, alpha, beta, h, 6)
    init = sim.random_initial_state(6, 2, np.random.default_rng(seed))
    return sim.run_scenario(PAPER, MODELS, example_target(), cfg, init, t_end,
                            disturbance=example_disturbance(), **kw)


def test_random_initial_state_draw_order():
    a = sim.random_initial_state(3, 2, np.random.default_rng(4))
    draws = np.random.default_rng(4).uniform(-25, 25, (4, 3, 2))
    for got, want in zip((a.est.eps, a.est.ups, a.q, a.qdot), draws):
        np.testing.assert_array_equal(got, want)
    assert a.time == 0.0


def test_compiled_flow_matches_reference(rng):
    models = [RobotModel((1.0 + 0.1 * i, 0.8), (1.0, 0.7 + 0.05 * i)) for i in range(6)]
    cfg = DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6, kp=np.array([[150.0, 20.0], [20.0, 90.0]]))
    q, qd, eps, ups = rng.uniform(-3, 3, (4, 6, 2))
    dist = example_disturbance()
    t0, seg, nsub = 1.7, 0.1, 640
    ref_q, ref_qd = sim.reference_segment(models, cfg, q, qd, eps, ups, t0, seg, nsub, dist)
    kq, kqd = q.copy(), qd.copy()
    buf = np.empty((nsub, 6, 2))
    status, rows = sim._kernel.integrate_segment(
        kq, kqd, eps, ups, t0, seg, nsub, np.stack([m.params() for m in models]),
        cfg.Kp, cfg.Kd, *dist.arrays(), 8, np.empty(nsub), buf, buf.copy(), buf.copy(), 0, 1e9)
    assert status == 0 and rows == nsub // 8 - 1
    np.testing.assert_allclose(kq, ref_q, atol=1e-10, rtol=0)
    np.testing.assert_allclose(kqd, ref_qd, atol=1e-10, rtol=0)


@pytest.mark.parametrize("gravity, position", [(9.81, (math.pi / 2, 0.0)), (0.0, (0.0, 0.0))])
def test_equilibrium_stays_put(gravity, position):
    models = [RobotModel(gravity_accel=gravity)] * 6
    tgt = static_target(list(position))
    p = np.tile(position, (6, 1))
    init = sim.HybridState(0.0, p, np.zeros((6, 2)), EstimatorState(p, np.zeros((6, 2))))
    cfg = DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6)
    tr = sim.run_scenario(PAPER, models, tgt, cfg, init, 10.0)
    m = sim.metrics(tr)
    assert max(m.sup_e, m.sup_edot, m.sup_eps_bar_inf, m.sup_ups_bar_inf) <= 1e-9
    assert np.abs(tr.e).max() <= 1e-9 and not m.diverged


def test_runs_are_bitwise_deterministic():
    a, b = example_run(3), example_run(3)
    for name in ("times", "kinds", "q", "qdot", "eps", "ups"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


@pytest.mark.parametrize("order", ["first", "second"])
def test_jump_bookkeeping(order):
    tr = example_run(1, t_end=3.0, order=order, alpha=1.1 if order == "second" else 0.9,
                     beta=0.9 if order == "second" else 1.1)
    assert np.all(np.diff(tr.times) >= 0)
    pre, post = tr.at_kind(sim.PRE_JUMP), tr.at_kind(sim.POST_JUMP)
    assert len(pre) == len(post) == 30
    np.testing.assert_allclose(tr.times[pre], 0.1 * np.arange(1, 31), atol=1e-12)
    assert np.array_equal(post, pre + 1)
    for r in pre:
        assert (tr.times == tr.times[r]).sum() == 2
        assert np.array_equal(tr.q[r], tr.q[r + 1])
    # the left limit is the exact drift of the previous post-jump value
    for a, b in zip(post[:-1], pre[1:]):
        np.testing.assert_allclose(tr.eps[b], tr.eps[a] + 0.1 * tr.ups[a], atol=1e-12)
        np.testing.assert_array_equal(tr.ups[b], tr.ups[a])
    if order == "second":
        for r in pre:
            assert np.array_equal(tr.eps[r], tr.eps[r + 1])
    # the first interval is pure flow: no jump at t0
    assert tr.kinds[0] == sim.FLOW and tr.times[0] == 0.0
    first_pre = pre[0]
    np.testing.assert_allclose(tr.eps[first_pre], tr.eps[0] + 0.1 * tr.ups[0], atol=1e-12)


def test_post_jump_follows_the_schedule():
    W = paper_topology().adjacency()
    W[4, 0] = 2.0
    other = build_topology(W)
    cfg = DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6)
    init = sim.random_initial_state(6, 2, np.random.default_rng(0))
    tgt = example_target()
    tr = sim.run_scenario([PAPER, other], MODELS, tgt, cfg, init, 0.5)
    pre = tr.at_kind(sim.PRE_JUMP)
    for k, r in enumerate(pre, start=1):
        topo = (PAPER, other)[(k - 1) % 2]
        want = jump(topo, cfg, EstimatorState(tr.eps[r], tr.ups[r]),
                    tgt.position_fn(tr.times[r]), tgt.velocity_fn(tr.times[r]))
        np.testing.assert_allclose(tr.eps[r + 1], want.eps, atol=1e-13)
        np.testing.assert_allclose(tr.ups[r + 1], want.ups, atol=1e-13)


def test_explicit_step_must_divide_period():
    with pytest.raises(sim.NonDividingStep):
        example_run(t_end=0.3, dt=0.03)
    tr = example_run(t_end=0.3, dt=0.1 / 800)
    assert len(tr.at_kind(sim.PRE_JUMP)) == 3


def test_explicit_and_automatic_steps_agree():
    auto = example_run(t_end=1.0)
    fine = example_run(t_end=1.0, dt=0.1 / 1600)
    np.testing.assert_allclose(auto.q[-1], fine.q[-1], atol=1e-6)


def test_partial_final_period():
    tr = example_run(t_end=0.35)
    assert len(tr.at_kind(sim.PRE_JUMP)) == 3
    assert tr.times[-1] == pytest.approx(0.35, abs=1e-3)
    assert tr.kinds[-1] == sim.FLOW


def test_t_end_before_start_rejected():
    with pytest.raises(ValueError):
        example_run(t_end=-1.0)


def test_unstable_gains_trip_guard_or_grow():
    tr = example_run(0, t_end=50.0, alpha=1.18, beta=1.18)
    m = sim.metrics(tr)
    assert m.diverged
    assert tr.diverged or m.growth_ratio >= 10


def test_low_guard_stops_early():
    tr = example_run(0, t_end=5.0, guard=30.0)
    assert tr.diverged and tr.diverged_at < 5.0
    assert tr.times[-1] <= tr.diverged_at + 1e-12


def test_metrics_window_and_errors():
    tr = example_run(0, t_end=5.0)
    m = sim.metrics(tr, 0.2)
    assert m.steady_window == pytest.approx((4.0, 5.0))
    sel = tr.times >= 4.0
    assert m.sup_e == pytest.approx(np.linalg.norm(tr.e[sel], axis=2).max())
    assert m.sup_ups_bar_inf == pytest.approx(np.abs(tr.ups_bar[sel]).max())
    with pytest.raises(ValueError):
        sim.metrics(tr, 0.0)
    empty = sim.Trace(np.empty(0), np.empty(0, np.int8), *(np.empty((0, 6, 2)),) * 4,
                      np.empty(0), tr.target, tr.cfg)
    with pytest.raises(sim.EmptyWindow):
        sim.metrics(empty)


def test_converged_run_is_inside_certificate():
    tr = example_run(2, t_end=50.0)
    m = sim.metrics(tr)
    est = region_estimates(PAPER, tr.cfg, tr.target, model_bounds(RobotModel(), 2 * math.sqrt(2)))
    assert not m.diverged
    assert m.sup_eps_bar_inf <= est.delta1 and m.sup_ups_bar_inf <= est.delta2


def test_csv_export_schema():
    tr = example_run(0, t_end=0.2)
    text = tr.to_csv()
    lines = text.splitlines()
    assert lines[0] == ("time,kind,robot,q1,q2,qd1,qd2,eps1,eps2,ups1,ups2,"
                        "e_norm2,edot_norm2")
    assert len(lines) == 1 + 6 * len(tr.times)
    row = lines[1].split(",")
    assert row[1] == "flow" and row[2] == "1"
    assert float(row[3]) == tr.q[0, 0, 0]  # full precision round trip
    kinds = {ln.split(",")[1] for ln in lines[1:]}
    assert kinds == {"flow", "pre_jump", "post_jump"}


def test_lyapunov_zero_and_positive(rng):
    model = RobotModel()
    lam_M = model_bounds(model, 1.0).lambda_M
    Kp, Kd = 2.5 * lam_M * np.eye(2), 3.0 * np.eye(2)
    assert sim.lyapunov_value(model, Kp, Kd, np.zeros(2), np.zeros(2), np.zeros(2)) == 0.0
    for _ in range(1000):
        q, e, ed = rng.uniform(-5, 5, (3, 2))
        assert sim.lyapunov_value(model, Kp, Kd, q, e, ed) > 0


def test_lyapunov_log_cosh_is_overflow_safe():
    v = sim.lyapunov_value(RobotModel(), 200 * np.eye(2), 300 * np.eye(2), np.zeros(2),
                           np.array([800.0, -900.0]), np.zeros(2))
    assert np.isfinite(v)


def test_lyapunov_diagnostic_bounded_in_steady_state():
    tr = example_run(1, t_end=50.0)
    V = sim.lyapunov_diagnostic(tr, 0, RobotModel(), tr.cfg)
    assert V.shape == tr.times.shape
    window = tr.times >= 40.0
    late, early = V[tr.times >= 45.0].max(), V[window & (tr.times < 45.0)].max()
    assert late <= 1.5 * early
    assert V[window].max() < V[0]


def test_lyapunov_warns_on_weak_gains():
    tr = example_run(1, t_end=0.2)
    weak = DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6, kp=1.0)
    with pytest.warns(UserWarning):
        sim.lyapunov_diagnostic(tr, 0, RobotModel(), weak)


def test_integrator_order():
    order = sim.integrator_order_check(1e-2)
    assert 3.8 <= order <= 4.2
    with pytest.raises(ValueError):
        sim.integrator_order_check(refine=1.0)
    with pytest.raises(ValueError):
        sim.integrator_order_check(omega=0.0, forcing=0.0)


def test_free_arm_energy_drift_is_fourth_order():
    model = RobotModel(gravity_accel=0.0)
    zero = np.zeros(2)

    def f(t, y):
        return np.concatenate([y[2:], forward_dynamics(model, y[:2], y[2:], zero, zero)])

    def energy(y):
        return 0.5 * y[2:] @ mass_matrix(model, y[:2]) @ y[2:]

    def drift(dt, T=2.0):
        y = np.array([0.3, 1.0, 2.0, -1.5])
        e0 = energy(y)
        for k in range(int(round(T / dt))):
            y = sim.rk4_step(f, k * dt, y, dt)
        return abs(energy(y) - e0)

    d1, d2 = drift(0.02), drift(0.01)
    assert math.log2(d1 / d2) >= 3.5

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sampled_tracking.criteria import random_schur_matrix, random_schur_tuple
from sampled_tracking.dcea import DceaConfig, Order, transition_blocks
from sampled_tracking.models import RobotModel, example_target, model_bounds, static_target
from sampled_tracking.stability import (BetaTooLarge, InfeasibleDesign, NotSchur,
                                        ScalingOverflow, SpectrumOnUnitCircle,
                                        alpha_beta_bound, characteristic_factorization_check,
                                        design_parameters, factor_polynomials,
                                        h_bound_second_order, inf_norm, is_schur,
                                        region_estimates, schur_via_bilinear,
                                        small_value_norm, spectral_radius, stability_report,
                                        theta_vartheta, uniform_lambda_certificate)
from sampled_tracking.topology import build_topology, paper_topology, random_topology, spectrum_D

seeds = st.integers(0, 2**32 - 1)
PAPER_S = spectrum_D(paper_topology())
BOUNDS = model_bounds(RobotModel(), 2 * math.sqrt(2))


def test_gain_bound_closed_form_on_paper_graph():
    # spectrum {+-1/sqrt2, 0 x4}: the binding eigenvalue is -1/sqrt2
    assert alpha_beta_bound(PAPER_S) == pytest.approx(4 - 2 * math.sqrt(2), rel=1e-12)
    assert abs(alpha_beta_bound(PAPER_S) - 1.1716) <= 1e-3


def test_gain_bound_trivial_and_real_spectra():
    assert alpha_beta_bound([0]) == 2.0
    s = np.array([-0.6, 0.2, 0.5])
    assert alpha_beta_bound(s) == pytest.approx(2 / 1.6)


def test_unit_circle_spectrum_rejected():
    with pytest.raises(SpectrumOnUnitCircle):
        alpha_beta_bound([1.0, 0.1])
    with pytest.raises(SpectrumOnUnitCircle):
        theta_vartheta([-1.0])


def test_theta_vartheta_positive_real_part(rng):
    for _ in range(100):
        s = rng.uniform(0, 0.999) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        th, vt = theta_vartheta([s])
        assert th[0] > 0
        np.testing.assert_allclose(th[0] + 1j * vt[0], 2 / (1 - s))


def test_h_bound_on_paper_graph_and_scaling():
    hb = h_bound_second_order(PAPER_S, 1.1, 0.9)
    assert hb == pytest.approx(0.4937686, abs=1e-6)
    assert abs(hb - 0.4938) <= 1e-3
    assert h_bound_second_order([0], 1.0, 1.0) == pytest.approx(2.0)
    assert h_bound_second_order(PAPER_S, 2.2, 0.9) == pytest.approx(hb / 2, rel=1e-14)
    with pytest.raises(BetaTooLarge):
        h_bound_second_order(PAPER_S, 1.0, 1.2)


def test_is_schur_examples():
    assert not is_schur(np.eye(3))
    assert is_schur(0.5 * np.eye(3))
    assert is_schur(transition_blocks(paper_topology().D, Order.FIRST, 0.9, 1.1, 0.1))
    assert spectral_radius(np.zeros((0, 0))) == 0.0
    with pytest.raises(ValueError):
        is_schur(np.array([[np.nan]]))


def test_first_order_sharp_threshold_on_paper_graph():
    D = paper_topology().D
    assert is_schur(transition_blocks(D, Order.FIRST, 1.17, 1.17, 0.1))
    assert not is_schur(transition_blocks(D, Order.FIRST, 1.18, 1.18, 0.1))
    assert schur_via_bilinear(PAPER_S, 1.17, 1.17, 0.1, "first")
    assert not schur_via_bilinear(PAPER_S, 1.18, 1.18, 0.1, "first")


def test_second_order_threshold_on_paper_graph():
    D = paper_topology().D
    for h, want in ((0.45, True), (0.49, True), (0.5, False)):
        assert is_schur(transition_blocks(D, Order.SECOND, 1.1, 0.9, h)) is want
        assert schur_via_bilinear(PAPER_S, 1.1, 0.9, h, "second") is want


def test_equal_gains_degenerate_factor():
    assert schur_via_bilinear(PAPER_S, 1.0, 1.0, 0.1, "first")
    assert not schur_via_bilinear(PAPER_S, 1.2, 1.2, 0.1, "first")


@given(seeds)
def test_bilinear_agrees_with_eigensolver(seed):
    rng = np.random.default_rng(seed)
    topo, a, b, h, order = random_schur_tuple(rng)
    direct = is_schur(transition_blocks(topo.D, order, a, b, h))
    assert schur_via_bilinear(spectrum_D(topo), a, b, h, order) == direct


def test_bilinear_agrees_on_two_hundred_tuples():
    rng = np.random.default_rng(99)
    verdicts = []
    for _ in range(200):
        topo, a, b, h, order = random_schur_tuple(rng)
        direct = is_schur(transition_blocks(topo.D, order, a, b, h))
        assert schur_via_bilinear(spectrum_D(topo), a, b, h, order) == direct
        verdicts.append(direct)
    assert 0 < sum(verdicts) < 200  # both outcomes exercised


def test_factor_roots_are_the_transition_spectrum():
    D = paper_topology().D
    for order, a, b, h in ((Order.FIRST, 0.9, 1.1, 0.1), (Order.SECOND, 1.1, 0.9, 0.45)):
        ev = np.linalg.eigvals(transition_blocks(D, order, a, b, h))
        vals = factor_polynomials(PAPER_S, a, b, h, order, ev)
        assert np.min(np.abs(vals), axis=1).max() < 1e-6


def test_factorization_scalar_case():
    t = build_topology([[0, 0], [1, 0]])
    for order in ("first", "second"):
        cfg = DceaConfig.uniform(order, 0.7, 1.3, 0.2, 1, m=1, kp=1.0, kd=1.0)
        assert characteristic_factorization_check(t, cfg, 1) < 1e-13


@given(seeds)
def test_factorization_random(seed):
    rng = np.random.default_rng(seed)
    t = random_topology(int(rng.integers(2, 8)), rng)
    order = rng.choice(["first", "second"])
    cfg = DceaConfig.uniform(order, *rng.uniform(0.05, 2, 2), rng.uniform(0.01, 1), t.n)
    assert characteristic_factorization_check(t, cfg, 2, num_probes=8, rng=rng) < 1e-8


def test_factorization_paper_graph():
    t = paper_topology()
    for order, a, b, h in (("first", 0.9, 1.1, 0.1), ("second", 1.1, 0.9, 0.45)):
        assert characteristic_factorization_check(t, DceaConfig.uniform(order, a, b, h, 6), 2) < 1e-8


def _assert_sound(A, cert, rng):
    T = cert.transform
    Tinv = np.linalg.inv(T)
    assert inf_norm(T @ A @ Tinv) < 1
    assert cert.matrix_norm(A) == pytest.approx(cert.induced_norm_value, rel=1e-9)
    for eta in rng.normal(size=(100, A.shape[0])):
        va = cert.vector_norm(eta)
        assert np.abs(eta).max() <= cert.b * va * (1 + 1e-12)
        assert va <= cert.c * np.abs(eta).max() * (1 + 1e-12)


def test_norm_diagonal_example(rng):
    A = np.diag([0.5, 0.3])
    cert = small_value_norm(A)
    assert cert.induced_norm_value == pytest.approx(0.5)
    assert cert.b == pytest.approx(1) and cert.c == pytest.approx(1)
    _assert_sound(A, cert, rng)


@pytest.mark.parametrize("method", ["perron", "geometric"])
def test_norm_jordan_example(method, rng):
    A = np.array([[0.9, 1.0], [0.0, 0.9]])
    cert = small_value_norm(A, method=method)
    assert inf_norm(A) > 1 and cert.induced_norm_value < 1
    _assert_sound(A, cert, rng)


def test_norm_on_hundred_random_schur_matrices():
    rng = np.random.default_rng(5)
    for _ in range(100):
        A = random_schur_matrix(rng)
        _assert_sound(A, small_value_norm(A), rng)


def test_norm_disc_sampled_eigenvalues():
    rng = np.random.default_rng(6)
    for _ in range(100):
        p = int(rng.integers(2, 8))
        lam = 0.95 * np.sqrt(rng.random(p)) * np.exp(2j * np.pi * rng.random(p))
        U = np.triu(rng.normal(size=(p, p)), 1) + np.diag(lam)
        Q, _ = np.linalg.qr(rng.normal(size=(p, p)) + 1j * rng.normal(size=(p, p)))
        A = Q @ U @ Q.conj().T
        A = np.real(A) if np.allclose(A.imag, 0) else A.real  # real test matrix
        if not is_schur(A):
            continue
        _assert_sound(A, small_value_norm(A), rng)


def test_norm_rejects_non_schur_and_bad_slack():
    with pytest.raises(NotSchur):
        small_value_norm(np.eye(2))
    with pytest.raises(ValueError):
        small_value_norm(0.5 * np.eye(2), slack=1.0)
    with pytest.raises(ValueError):
        small_value_norm(0.5 * np.eye(2) + np.eye(2, k=1), method="nope")


def test_geometric_scaling_reports_underflow():
    p = 100
    A = 0.999 * np.eye(p) + 50 * np.eye(p, k=1)
    with pytest.raises(ScalingOverflow):
        small_value_norm(A, method="geometric")


def test_lift_keeps_constants(rng):
    A = random_schur_matrix(rng)
    cert = small_value_norm(A)
    big = cert.lift(3)
    AL = np.kron(A, np.eye(3))
    assert inf_norm(big.transform @ AL @ np.linalg.inv(big.transform)) == \
        pytest.approx(cert.induced_norm_value, rel=1e-12)
    assert inf_norm(np.linalg.inv(big.transform)) == pytest.approx(big.b, rel=1e-9)


def test_uniform_certificate_contracts_for_all_smaller_periods(rng):
    D = paper_topology().D
    cert = uniform_lambda_certificate(D, 0.9, 1.1, h_ref=0.5)
    for h in (1e-4, 0.05, 0.1, 0.3, 0.5):
        L = transition_blocks(D, Order.FIRST, 0.9, 1.1, h)
        assert cert.matrix_norm(L) <= cert.induced_norm_value + 1e-12
    _assert_sound(transition_blocks(D, Order.FIRST, 0.9, 1.1, 0.5), cert, rng)


@given(seeds)
def test_geometric_series_bound(seed):
    rng = np.random.default_rng(seed)
    A = random_schur_matrix(rng)
    cert = small_value_norm(A)
    nrm = cert.induced_norm_value
    x = rng.normal(size=A.shape[0]) * 10
    x1 = cert.vector_norm(x)
    dmax = 0.0
    for k in range(1000):
        d = rng.uniform(-1, 1, A.shape[0])
        dmax = max(dmax, cert.vector_norm(d))
        x = A @ x + d
        assert cert.vector_norm(x) <= nrm ** (k + 1) * x1 + dmax / (1 - nrm) + 1e-9


def test_report_on_paper_graph():
    t = paper_topology()
    rep = stability_report(t, DceaConfig.uniform("second", 1.1, 0.9, 0.45, 6))
    assert rep.spanning_tree and rep.hypotheses_hold()
    assert rep.beta_cap == pytest.approx(4 - 2 * math.sqrt(2))
    assert rep.h_bound == pytest.approx(0.4937686, abs=1e-6)
    assert rep.schur_Gamma
    rec = rep.to_record()
    assert rec["order"] == "second" and rec["hypotheses_hold"] is True
    bare = stability_report(t)
    assert bare.order is None and bare.hypotheses_hold()


def test_report_without_tree():
    t = build_topology([[0, 0, 0], [0, 0, 1], [0, 1, 0]])
    rep = stability_report(t, DceaConfig.uniform("first", 0.5, 0.5, 0.1, 2))
    assert not rep.spanning_tree and rep.alpha_beta_bound is None
    assert not rep.hypotheses_hold()


def test_first_order_estimates_regression():
    t = paper_topology()
    est = region_estimates(t, DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6),
                           example_target(), BOUNDS)
    assert est.delta1 == pytest.approx(0.1 * est.kappa1, rel=1e-15)
    assert est.delta2 == pytest.approx(0.1 * min(est.kappa1, est.kappa2), rel=1e-15)
    # frozen values of this build's certificate
    assert est.delta1 == pytest.approx(886.997, rel=1e-5)
    assert est.delta2 == pytest.approx(66.504, rel=1e-4)
    assert est.delta3 > 0 and est.delta4 > 0
    assert est.eps_bound == est.delta1


def test_estimates_linear_in_period():
    t = paper_topology()
    out = []
    for h in (0.05, 0.1, 0.2, 0.5):
        cfg = DceaConfig.uniform("first", 0.9, 1.1, h, 6)
        est = region_estimates(t, cfg, example_target(), BOUNDS, h_ref=0.5)
        out.append((est.delta1 / h, est.delta2 / h))
    np.testing.assert_allclose(out, [out[0]] * len(out), rtol=1e-14, atol=0)
    e1 = region_estimates(t, DceaConfig.uniform("first", 0.9, 1.1, 0.05, 6), example_target(),
                          BOUNDS, h_ref=0.1)
    e2 = region_estimates(t, DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6), example_target(),
                          BOUNDS, h_ref=0.1)
    assert e1.delta1 * 2 == pytest.approx(e2.delta1, rel=1e-15)
    assert e1.delta2 * 2 == pytest.approx(e2.delta2, rel=1e-15)


def test_static_target_zero_radii():
    t = paper_topology()
    est = region_estimates(t, DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6),
                           static_target([0.0, 0.0]), BOUNDS)
    assert est.kappa1 == est.kappa2 == est.delta1 == est.delta2 == 0.0


def test_second_order_estimates():
    t = paper_topology()
    est = region_estimates(t, DceaConfig.uniform("second", 1.1, 0.9, 0.45, 6),
                           example_target(), BOUNDS)
    assert est.kappa3 > 0 and est.delta5 > 0 and est.delta6 > 0
    assert est.eps_bound == pytest.approx(0.45 * est.kappa3)
    with pytest.raises(NotSchur):
        region_estimates(t, DceaConfig.uniform("second", 1.1, 0.9, 0.5, 6), example_target(),
                         BOUNDS)
    with pytest.raises(NotSchur):
        region_estimates(t, DceaConfig.uniform("first", 1.18, 1.0, 0.1, 6), example_target(),
                         BOUNDS)


def test_lumped_constants_formula():
    t = paper_topology()
    tgt = example_target()
    est = region_estimates(t, DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6), tgt, BOUNDS)
    b = BOUNDS
    mu1 = b.lambda_d + b.lambda_M * math.sqrt(2) * 1.0 + b.lambda_c * 2 * 9.0 + b.lambda_g
    np.testing.assert_allclose(est.mu1, mu1)
    np.testing.assert_allclose(est.varrho1, 0)
    np.testing.assert_allclose(est.varrho2, est.mu2)


def test_design_parameters_behaviour():
    t = paper_topology()
    cfg = DceaConfig.uniform("first", 0.9, 1.1, 0.1, 6)
    tgt = example_target()
    base = design_parameters(0.1, 0.1, 0.5, t, cfg, tgt, BOUNDS)
    assert np.all(np.isfinite(base.kp_floor)) and base.h_cap > 0
    half = design_parameters(0.05, 0.1, 0.5, t, cfg, tgt, BOUNDS)
    # mu/(eps delta) dominates 2 lambda_M here, so the floor doubles exactly
    np.testing.assert_allclose(half.kp_floor, 2 * base.kp_floor, rtol=1e-12)
    near_one = design_parameters(0.1, 0.1, 1 - 1e-9, t, cfg, tgt, BOUNDS)
    assert near_one.h_cap < 1e-8 * base.h_cap
    assert base.kp_floor[0] == pytest.approx(839.9, rel=1e-3)
    with pytest.raises(ValueError):
        design_parameters(0.1, 0.1, 1.0, t, cfg, tgt, BOUNDS)
    zero_mu = region_estimates(t, cfg, tgt, BOUNDS)
    zero_mu.mu1 = np.zeros(6)
    with pytest.raises(InfeasibleDesign):
        design_parameters(0.1, 0.1, 0.5, t, cfg, tgt, BOUNDS, estimates=zero_mu)

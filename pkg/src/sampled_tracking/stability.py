"""Closed-form stability regions, Schur checks and error-region certificates.

Everything here works on the spectrum {s_i} of D.  The transition matrices
are block 2x2 in D, so their eigenvalues come from one quadratic per s_i:

    first order   (lam - 1 + alpha (1 - s)) (lam - 1 + beta (1 - s))
    second order  lam^2 + ((alpha h + beta)(1 - s) - 2) lam + 1 - beta (1 - s)

Each quadratic is Schur iff its bilinear transform (lam = (z + 1)/(z - 1)) is
Hurwitz, which yields the closed-form bounds below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .dcea import DceaConfig, Order, transition_blocks
from .models import ModelBounds, TargetSpec
from .topology import EigenFailure, Topology, has_spanning_tree, spectrum_D

SCHUR_TOL = 1e-10


class SpectrumOnUnitCircle(ValueError):
    pass


class BetaTooLarge(ValueError):
    pass


class NotSchur(ValueError):
    pass


class ScalingOverflow(ArithmeticError):
    pass


class InfeasibleDesign(ValueError):
    pass


def _checked_spectrum(spectrum) -> np.ndarray:
    s = np.asarray(spectrum, dtype=complex).ravel()
    if s.size == 0:
        raise ValueError("empty spectrum")
    if np.any(np.abs(1 - s) < 1e-12) or np.any(np.abs(s) >= 1 - SCHUR_TOL):
        raise SpectrumOnUnitCircle(
            "D has an eigenvalue on or outside the unit circle; "
            "the graph has no spanning tree rooted at the target")
    return s


def alpha_beta_bound(spectrum) -> float:
    """min_i (2 - 2 Re s_i) / |1 - s_i|^2: first-order DCEA needs alpha, beta below it."""
    s = _checked_spectrum(spectrum)
    return float(np.min((2 - 2 * s.real) / np.abs(1 - s) ** 2))


def theta_vartheta(spectrum):
    s = _checked_spectrum(spectrum)
    w = 2 / (1 - s)
    return w.real, w.imag


def h_bound_second_order(spectrum, alpha: float, beta: float) -> float:
    """Largest admissible sampling period (exclusive) for the second-order DCEA."""
    theta, vartheta = theta_vartheta(spectrum)
    if not beta < theta.min():
        raise BetaTooLarge(f"beta = {beta} must be below min theta = {theta.min():.6g}")
    return float(np.min(2 * beta**2 * (theta - beta) / (alpha * (vartheta**2 + beta**2))))


def spectral_radius(A) -> float:
    try:
        ev = np.linalg.eigvals(np.asarray(A))
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return float(np.max(np.abs(ev))) if ev.size else 0.0


def is_schur(A) -> bool:
    A = np.asarray(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return spectral_radius(A) < 1 - SCHUR_TOL


def schur_via_bilinear(spectrum, alpha: float, beta: float, h: float, order) -> bool:
    """Schur stability of Lambda/Gamma decided from Hurwitz tests on z-domain factors."""
    s = _checked_spectrum(spectrum)
    c = 1 - s
    if Order.parse(order) is Order.FIRST:
        # roots of the transformed factors
        z1 = 1 - 2 / (alpha * c)
        z2 = 1 - 2 / (beta * c)
        return bool(np.all(z1.real < 0) and np.all(z2.real < 0))
    theta, vartheta = (2 / c).real, (2 / c).imag
    a1 = 2 * beta / (alpha * h)
    cond = beta**2 * (2 * (theta - beta) / (alpha * h) - 1) - vartheta**2
    return bool(a1 > 0 and np.all(cond > 0))


def factor_polynomials(spectrum, alpha, beta, h, order, lam) -> np.ndarray:
    """phi_i(lam) or psi_i(lam) for every s_i; shape (len(lam), n)."""
    s = np.asarray(spectrum, dtype=complex)[None, :]
    lam = np.asarray(lam, dtype=complex)[:, None]
    c = 1 - s
    if Order.parse(order) is Order.FIRST:
        return (lam - 1 + alpha * c) * (lam - 1 + beta * c)
    return lam**2 + ((alpha * h + beta) * c - 2) * lam + 1 - beta * c


def characteristic_factorization_check(t: Topology, cfg: DceaConfig, m: int,
                                       num_probes: int = 32, rng=None,
                                       radius: float = 2.0) -> float:
    """Max relative gap between det(lam I - Lambda/Gamma) and the factor product."""
    rng = np.random.default_rng(rng)
    A = np.kron(transition_blocks(t.D, cfg.order, cfg.alpha, cfg.beta, cfg.h), np.eye(m))
    s = spectrum_D(t)
    lam = radius * np.exp(2j * np.pi * rng.random(num_probes))
    eye = np.eye(A.shape[0])
    worst = 0.0
    factors = factor_polynomials(s, cfg.alpha, cfg.beta, cfg.h, cfg.order, lam)
    for k, z in enumerate(lam):
        lhs = np.linalg.det(z * eye - A)
        rhs = np.prod(factors[k] ** m)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    return float(worst)


@dataclass
class NormCertificate:
    """Vector norm ||eta||_A = ||T eta||_inf with induced ||A||_A = ||T A T^-1||_inf < 1."""

    transform: np.ndarray
    induced_norm_value: float
    b: float
    c: float
    inverse: np.ndarray = field(repr=False, default=None)
    valid_up_to_h: Optional[float] = None

    def __post_init__(self):
        if self.inverse is None:
            self.inverse = np.linalg.inv(self.transform)

    def vector_norm(self, eta) -> float:
        return float(np.max(np.abs(self.transform @ np.asarray(eta))))

    def matrix_norm(self, A) -> float:
        return inf_norm(self.transform @ np.asarray(A) @ self.inverse)

    def lift(self, m: int) -> "NormCertificate":
        """Same certificate for A (x) I_m; every constant is unchanged."""
        eye = np.eye(m)
        return NormCertificate(np.kron(self.transform, eye), self.induced_norm_value,
                               self.b, self.c, np.kron(self.inverse, eye),
                               self.valid_up_to_h)


def inf_norm(A) -> float:
    return float(np.max(np.sum(np.abs(A), axis=1))) if np.size(A) else 0.0


def _diag_scaling(U: np.ndarray, rho: float, slack: float, method: str) -> np.ndarray:
    p = U.shape[0]
    strict = np.abs(np.triu(U, 1))
    if not strict.any():
        return np.ones(p)
    budget = slack * (1 - rho)
    if method == "perron":
        # v = (r I - |U|)^-1 1 > 0 gives |U| v = r v - 1, so every scaled row sum is < r
        r = rho + budget
        N = np.abs(U)
        v = scipy.linalg.solve_triangular(r * np.eye(p) - N, np.ones(p))
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ScalingOverflow("Perron scaling vector is not finite and positive")
        return v / v.max()
    if method == "geometric":
        offsets = np.arange(p)[None, :] - np.arange(p)[:, None]   # j - i
        powers = np.maximum(offsets, 0)

        def excess(tt):
            with np.errstate(under="ignore"):
                return np.max(np.sum(strict * tt**powers, axis=1))

        if excess(1.0) <= budget:
            tt = 1.0
        else:
            lo, hi = 0.0, 1.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if excess(mid) <= budget:
                    lo = mid
                else:
                    hi = mid
            tt = lo
        with np.errstate(under="ignore"):
            d = tt ** np.arange(p, dtype=float)
        if tt == 0.0 or d[-1] < np.finfo(float).tiny:
            raise ScalingOverflow(f"scaling factor t = {tt:.3g} underflows at order {p}")
        return d
    raise ValueError(f"unknown scaling method {method!r}")


def small_value_norm(A, slack: float = 0.5, method: str = "perron") -> NormCertificate:
    """Certificate of a norm in which the Schur matrix A is a strict contraction.

    A = Q U Q^H (complex Schur form); T = diag(d)^-1 Q^H with a positive
    diagonal d that damps the strictly upper part of U below
    slack * (1 - rho(A)).
    """
    A = np.asarray(A, dtype=float)
    if not 0 < slack < 1:
        raise ValueError("slack must lie in (0, 1)")
    if not is_schur(A):
        raise NotSchur(f"spectral radius {spectral_radius(A):.12g} is not below 1")
    U, Q = scipy.linalg.schur(A, output="complex")
    rho = float(np.max(np.abs(np.diag(U))))
    d = _diag_scaling(U, rho, slack, method)
    T = (Q / d).conj().T          # diag(1/d) Q^H
    Tinv = Q * d                  # Q diag(d)
    if np.max(np.abs(T.imag)) == 0.0:
        T, Tinv = T.real, Tinv.real
    value = inf_norm(T @ A @ Tinv)
    b, c = inf_norm(Tinv), inf_norm(T)
    if not (np.isfinite(b) and np.isfinite(c)):
        raise ScalingOverflow("equivalence constants overflow")
    if not value < 1:
        raise ScalingOverflow(f"scaled norm {value!r} failed to drop below 1")
    return NormCertificate(T, value, b, c, Tinv)


def uniform_lambda_certificate(D: np.ndarray, alpha: float, beta: float,
                               h_ref: float, slack: float = 0.5,
                               method: str = "perron") -> NormCertificate:
    """One norm that contracts the first-order transition matrix for every h <= h_ref.

    Lambda(h) = [[A, h P], [0, P]] with A and P Schur.  With
    T = diag(T_A, tau T_P) the scaled off-diagonal block is (h / tau) T_A P T_P^-1,
    so choosing tau from h_ref bounds the induced norm uniformly in h.
    """
    n = D.shape[0]
    I = np.eye(n)
    A = (1 - alpha) * I + alpha * D
    P = (1 - beta) * I + beta * D
    cert_a = small_value_norm(A, slack, method)
    cert_p = small_value_norm(P, slack, method)
    coupling = inf_norm(cert_a.transform @ P @ cert_p.inverse)
    rho_a = cert_a.induced_norm_value
    if coupling == 0.0:
        tau = 1.0
        top = rho_a
    else:
        tau = h_ref * coupling / (slack * (1 - rho_a))
        top = rho_a + (h_ref / tau) * coupling
    value = max(top, cert_p.induced_norm_value)
    dtype = np.result_type(cert_a.transform, cert_p.transform)
    T = np.zeros((2 * n, 2 * n), dtype=dtype)
    Tinv = np.zeros_like(T)
    T[:n, :n], T[n:, n:] = cert_a.transform, tau * cert_p.transform
    Tinv[:n, :n], Tinv[n:, n:] = cert_a.inverse, cert_p.inverse / tau
    b = max(cert_a.b, cert_p.b / tau)
    c = max(cert_a.c, tau * cert_p.c)
    if not value < 1:
        raise ScalingOverflow("uniform certificate failed to contract")
    return NormCertificate(T, value, b, c, Tinv, valid_up_to_h=h_ref)


@dataclass
class StabilityReport:
    spectrum: np.ndarray
    spanning_tree: bool
    alpha_beta_bound: Optional[float]
    theta: Optional[np.ndarray]
    vartheta: Optional[np.ndarray]
    beta_cap: Optional[float]
    h_bound: Optional[float] = None
    schur_Lambda: Optional[bool] = None
    schur_Gamma: Optional[bool] = None
    order: Optional[Order] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    h: Optional[float] = None

    def hypotheses_hold(self) -> bool:
        """Whether the configured parameters meet the relevant theorem's conditions."""
        if not self.spanning_tree or self.alpha_beta_bound is None:
            return False
        if self.order is None:
            return True
        if self.order is Order.FIRST:
            return self.alpha < self.alpha_beta_bound and self.beta < self.alpha_beta_bound
        return (self.beta < self.beta_cap and self.h_bound is not None
                and self.h < self.h_bound)

    def to_record(self) -> dict:
        def cx(z):
            return [[float(v.real), float(v.imag)] for v in np.asarray(z)]

        def fl(a):
            return None if a is None else [float(v) for v in a]

        return {
            "spanning_tree": self.spanning_tree,
            "spectrum": cx(self.spectrum),
            "alpha_beta_bound": self.alpha_beta_bound,
            "theta": fl(self.theta),
            "vartheta": fl(self.vartheta),
            "beta_cap": self.beta_cap,
            "h_bound": self.h_bound,
            "schur_Lambda": self.schur_Lambda,
            "schur_Gamma": self.schur_Gamma,
            "order": None if self.order is None else self.order.value,
            "alpha": self.alpha,
            "beta": self.beta,
            "h": self.h,
            "hypotheses_hold": self.hypotheses_hold(),
        }


def stability_report(t: Topology, cfg: Optional[DceaConfig] = None,
                     m: int = 2) -> StabilityReport:
    s = spectrum_D(t)
    tree = has_spanning_tree(t)
    try:
        bound = alpha_beta_bound(s)
        theta, vartheta = theta_vartheta(s)
        beta_cap = float(theta.min())
    except SpectrumOnUnitCircle:
        bound = theta = vartheta = beta_cap = None
    rep = StabilityReport(s, tree, bound, theta, vartheta, beta_cap)
    if cfg is None:
        return rep
    rep.order, rep.alpha, rep.beta, rep.h = cfg.order, cfg.alpha, cfg.beta, cfg.h
    rep.schur_Lambda = is_schur(transition_blocks(t.D, Order.FIRST, cfg.alpha, cfg.beta, cfg.h))
    rep.schur_Gamma = is_schur(transition_blocks(t.D, Order.SECOND, cfg.alpha, cfg.beta, cfg.h))
    if bound is not None:
        try:
            rep.h_bound = h_bound_second_order(s, cfg.alpha, cfg.beta)
        except BetaTooLarge:
            rep.h_bound = None
    return rep


@dataclass
class RegionEstimates:
    """Error-region radii.  All are sufficient (conservative) certificates."""

    order: Order
    h: float
    kappa1: Optional[float] = None
    kappa2: Optional[float] = None
    kappa3: Optional[float] = None
    delta1: Optional[float] = None
    delta2: Optional[float] = None
    delta3: Optional[float] = None
    delta4: Optional[float] = None
    delta5: Optional[float] = None
    delta6: Optional[float] = None
    mu1: Optional[np.ndarray] = None
    mu2: Optional[np.ndarray] = None
    varrho1: Optional[np.ndarray] = None
    varrho2: Optional[np.ndarray] = None
    certificates: dict = field(default_factory=dict, repr=False)

    @property
    def eps_bound(self) -> float:
        """Certified steady-state bound on ||eps_bar_i||_inf."""
        return self.delta1 if self.order is Order.FIRST else self.h * self.kappa3

    @property
    def ups_bound(self) -> float:
        return self.delta2 if self.order is Order.FIRST else self.h * self.kappa3

    def to_record(self) -> dict:
        out = {"order": self.order.value, "h": self.h}
        for name in ("kappa1", "kappa2", "kappa3", "delta1", "delta2", "delta3",
                     "delta4", "delta5", "delta6"):
            out[name] = getattr(self, name)
        for name in ("mu1", "mu2", "varrho1", "varrho2"):
            v = getattr(self, name)
            out[name] = None if v is None else [float(x) for x in v]
        return out


def _per_robot_bounds(bounds, n: int) -> list:
    if isinstance(bounds, ModelBounds):
        return [bounds] * n
    bounds = list(bounds)
    if len(bounds) != n:
        raise ValueError(f"need {n} ModelBounds, got {len(bounds)}")
    return bounds


def lumped_constants(bounds: Sequence[ModelBounds], target: TargetSpec, m: int):
    """mu_1, mu_2, varrho_1, varrho_2 per robot.

    ||a0||_2 <= sqrt(m) gamma2 and ||v0||_2 <= sqrt(m) gamma1 turn the
    infinity-norm target bounds into the 2-norm ones the model bounds use.
    The velocity budget of the Coriolis term is the target speed sqrt(m) gamma1.
    """
    rm = math.sqrt(m)
    g1, g2 = target.gamma1, target.gamma2
    mu1 = np.array([b.lambda_d + b.lambda_M * rm * g2 + b.lambda_c * m * g1**2 + b.lambda_g
                    for b in bounds])
    mu2 = np.array([b.lambda_c * rm * g1 for b in bounds])
    return mu1, mu2, np.zeros_like(mu1), mu2.copy()


def region_estimates(t: Topology, cfg: DceaConfig, target: TargetSpec,
                     bounds, m: int = 2, h_ref: Optional[float] = None,
                     slack: float = 0.5) -> RegionEstimates:
    """kappa/delta certificates for the configured DCEA.

    For the first-order algorithm the norm certificate is built once for all
    h <= h_ref (default cfg.h), so delta1 and delta2 are exactly h * constant
    on that range.
    """
    n = t.n
    s = spectrum_D(t)
    g = max(2 * target.gamma1, target.gamma2)
    est = RegionEstimates(cfg.order, cfg.h)
    kp_max = np.linalg.eigvalsh(cfg.Kp)[:, -1]
    kd_max = np.linalg.eigvalsh(cfg.Kd)[:, -1]
    kp_min = np.linalg.eigvalsh(cfg.Kp)[:, 0]
    kd_min = np.linalg.eigvalsh(cfg.Kd)[:, 0]
    mu1, mu2, rho1, rho2 = lumped_constants(_per_robot_bounds(bounds, n), target, m)
    est.mu1, est.mu2, est.varrho1, est.varrho2 = mu1, mu2, rho1, rho2
    rm = math.sqrt(m)

    if cfg.order is Order.FIRST:
        bound = alpha_beta_bound(s)
        if not (cfg.alpha < bound and cfg.beta < bound):
            raise NotSchur(f"alpha, beta must both be below {bound:.6g}")
        h_ref = cfg.h if h_ref is None else float(h_ref)
        if cfg.h > h_ref:
            raise ValueError("h exceeds the certificate's reference period h_ref")
        lam = uniform_lambda_certificate(t.D, cfg.alpha, cfg.beta, h_ref, slack).lift(m)
        pn = (1 - cfg.beta) * np.eye(n) + cfg.beta * t.D
        pc = small_value_norm(pn, slack).lift(m)
        est.kappa1 = lam.b * lam.c * g / (1 - lam.induced_norm_value)
        est.kappa2 = pc.b * pc.c * target.gamma2 / (1 - pc.induced_norm_value)
        est.delta1 = cfg.h * est.kappa1
        est.delta2 = cfg.h * min(est.kappa1, est.kappa2)
        num = mu1 + rm * (est.delta1 * kp_max + est.delta2 * kd_max)
        est.delta3 = float(np.max(_safe_div(num, kp_min - rho1)))
        est.delta4 = float(np.max(_safe_div(num, kd_min - rho2)))
        est.certificates = {"Lambda": lam, "P": pc}
    else:
        hb = h_bound_second_order(s, cfg.alpha, cfg.beta)
        if not cfg.h < hb:
            raise NotSchur(f"h = {cfg.h} must be below {hb:.6g}")
        gn = transition_blocks(t.D, Order.SECOND, cfg.alpha, cfg.beta, cfg.h)
        gc = small_value_norm(gn, slack).lift(m)
        est.kappa3 = gc.b * gc.c * g / (1 - gc.induced_norm_value)
        num = mu1 + cfg.h * est.kappa3 * rm * (kp_max + kd_max)
        est.delta5 = float(np.max(_safe_div(num, kp_min - rho1)))
        est.delta6 = float(np.max(_safe_div(num, kd_min - rho2)))
        est.certificates = {"Gamma": gc}
    return est


def _safe_div(num, den):
    den = np.asarray(den, dtype=float)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)


@dataclass
class DesignFloors:
    kp_floor: np.ndarray
    kd_floor: np.ndarray
    h_cap: float


def design_parameters(delta_pos: float, delta_vel: float, epsilon: float,
                      t: Topology, cfg: DceaConfig, target: TargetSpec, bounds,
                      m: int = 2, estimates: Optional[RegionEstimates] = None
                      ) -> DesignFloors:
    """Gain floors and sampling-period cap guaranteeing the requested radii."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not (delta_pos > 0 and delta_vel > 0):
        raise ValueError("target radii must be positive")
    est = estimates or region_estimates(t, cfg, target, bounds, m)
    per = _per_robot_bounds(bounds, t.n)
    lam_M = np.array([b.lambda_M for b in per])
    mu1, rho1, rho2 = est.mu1, est.varrho1, est.varrho2
    kp_floor = np.maximum(2 * lam_M, mu1 / (epsilon * delta_pos) + rho1)
    kd_floor = mu1 / (epsilon * delta_vel) + rho2
    kp_max = np.linalg.eigvalsh(cfg.Kp)[:, -1]
    kd_max = np.linalg.eigvalsh(cfg.Kd)[:, -1]
    rm = math.sqrt(m)
    if cfg.order is Order.FIRST:
        den = epsilon * rm * (est.kappa1 * kp_max + min(est.kappa1, est.kappa2) * kd_max)
    else:
        den = epsilon * est.kappa3 * rm * (kp_max + kd_max)
    with np.errstate(divide="ignore"):
        caps = mu1 * (1 - epsilon) / den
    h_cap = float(np.min(caps))
    if not h_cap > 0:
        raise InfeasibleDesign(f"sampling-period cap {h_cap} is not positive")
    return DesignFloors(kp_floor, kd_floor, h_cap)

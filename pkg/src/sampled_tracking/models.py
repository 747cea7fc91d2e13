"""Two-link planar manipulator, target oscillator and disturbance models.

Angle convention: ``q1`` is the shoulder angle measured from the horizontal,
``q2`` the elbow angle relative to link 1.  Links are uniform thin rods with
the centre of mass at half length.  With this convention the arm stands
straight up at ``q = (pi/2, 0)`` and both gravity torques vanish there.

    M11 = I1 + I2 + m1 lc1^2 + m2 (l1^2 + lc2^2 + 2 l1 lc2 cos q2)
    M12 = M21 = I2 + m2 (lc2^2 + l1 lc2 cos q2)
    M22 = I2 + m2 lc2^2

    C = hc * [[qd2, qd1 + qd2], [-qd1, 0]],   hc = -m2 l1 lc2 sin q2

    G1 = g ((m1 lc1 + m2 l1) cos q1 + m2 lc2 cos(q1 + q2))
    G2 = g m2 lc2 cos(q1 + q2)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar


class SingularMass(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RobotModel:
    link_masses: tuple = (1.0, 1.0)
    link_lengths: tuple = (1.0, 1.0)
    link_inertias: tuple | None = None
    gravity_accel: float = 9.81

    def __post_init__(self):
        masses = tuple(float(x) for x in self.link_masses)
        lengths = tuple(float(x) for x in self.link_lengths)
        if self.link_inertias is None:
            inertias = tuple(mk * lk**2 / 12.0 for mk, lk in zip(masses, lengths))
        else:
            inertias = tuple(float(x) for x in self.link_inertias)
        for name, vals in (("link_masses", masses), ("link_lengths", lengths),
                           ("link_inertias", inertias)):
            if len(vals) != 2:
                raise ValueError(f"{name} needs exactly 2 entries")
            if not all(v > 0 and math.isfinite(v) for v in vals):
                raise ValueError(f"{name} must be strictly positive, got {vals}")
        if not math.isfinite(self.gravity_accel):
            raise ValueError("gravity_accel must be finite")
        object.__setattr__(self, "link_masses", masses)
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "link_inertias", inertias)
        object.__setattr__(self, "gravity_accel", float(self.gravity_accel))

    m = 2

    def params(self) -> np.ndarray:
        """Flat parameter vector ``(m1, m2, l1, l2, I1, I2, g)`` for kernels."""
        return np.array([*self.link_masses, *self.link_lengths,
                         *self.link_inertias, self.gravity_accel])

    def _coeffs(self):
        m1, m2 = self.link_masses
        l1, l2 = self.link_lengths
        I1, I2 = self.link_inertias
        lc1, lc2 = l1 / 2.0, l2 / 2.0
        a = I1 + I2 + m1 * lc1**2 + m2 * (l1**2 + lc2**2)
        b = m2 * l1 * lc2
        d = I2 + m2 * lc2**2
        return a, b, d


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    a, b, d = model._coeffs()
    c2 = math.cos(q[1])
    return np.array([[a + 2 * b * c2, d + b * c2],
                     [d + b * c2, d]])


def mass_matrix_dot(model: RobotModel, q, qdot) -> np.ndarray:
    """Time derivative of M along (q, qdot)."""
    _, b, _ = model._coeffs()
    s = -b * math.sin(q[1]) * qdot[1]
    return np.array([[2 * s, s], [s, 0.0]])


def coriolis_matrix(model: RobotModel, q, qdot) -> np.ndarray:
    _, b, _ = model._coeffs()
    hc = -b * math.sin(q[1])
    return np.array([[hc * qdot[1], hc * (qdot[0] + qdot[1])],
                     [-hc * qdot[0], 0.0]])


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    m1, m2 = model.link_masses
    l1, l2 = model.link_lengths
    g = model.gravity_accel
    c12 = math.cos(q[0] + q[1])
    g2 = g * m2 * (l2 / 2) * c12
    g1 = g * (m1 * l1 / 2 + m2 * l1) * math.cos(q[0]) + g2
    return np.array([g1, g2])


def forward_dynamics(model: RobotModel, q, qdot, tau, tau_d) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    M = mass_matrix(model, q)
    if np.linalg.cond(M) > 1e12:
        raise SingularMass(f"mass matrix ill-conditioned at q = {q}")
    rhs = (np.asarray(tau, dtype=float) + np.asarray(tau_d, dtype=float)
           - coriolis_matrix(model, q, qdot) @ qdot - gravity_vector(model, q))
    return np.linalg.solve(M, rhs)


@dataclass(frozen=True)
class ModelBounds:
    lambda_m: float
    lambda_M: float
    lambda_c: float
    lambda_g: float
    lambda_d: float

    def __post_init__(self):
        if not 0 < self.lambda_m <= self.lambda_M:
            raise ValueError("need 0 < lambda_m <= lambda_M")


def _coriolis_shape_norm() -> float:
    """max over unit eta of ||[[eta2, eta1 + eta2], [-eta1, 0]]||_2."""

    def neg_sigma(theta):
        a, b = math.cos(theta), math.sin(theta)
        return -np.linalg.norm(np.array([[b, a + b], [-a, 0.0]]), 2)

    grid = np.linspace(0.0, math.pi, 2001)
    k = int(np.argmin([neg_sigma(th) for th in grid]))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(neg_sigma, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(-min(res.fun, neg_sigma(grid[k])))


_CORIOLIS_SHAPE = None


def model_bounds(model: RobotModel, disturbance_cap: float) -> ModelBounds:
    """Bound constants of the robot model.

    M depends on q only through cos(q2) and is affine in it, so its extreme
    eigenvalues over all q occur at cos(q2) = +-1.  The Coriolis bound is
    linear in ||eta||_2 and needs no velocity cap.
    """
    global _CORIOLIS_SHAPE
    if not disturbance_cap > 0:
        raise ValueError("disturbance_cap must be positive")
    ev = np.concatenate([np.linalg.eigvalsh(mass_matrix(model, (0.0, q2)))
                         for q2 in (0.0, math.pi)])
    if _CORIOLIS_SHAPE is None:
        _CORIOLIS_SHAPE = _coriolis_shape_norm()
    _, b, _ = model._coeffs()
    lambda_c = b * _CORIOLIS_SHAPE

    m1, m2 = model.link_masses
    l1, l2 = model.link_lengths
    g = abs(model.gravity_accel)
    big = m1 * l1 / 2 + m2 * l1
    small = m2 * l2 / 2
    lambda_g = g * math.hypot(big + small, small)
    if lambda_g == 0.0:
        warnings.warn("gravity_accel = 0: lambda_g reported as the smallest "
                      "positive float", stacklevel=2)
        lambda_g = float(np.finfo(float).tiny)
    return ModelBounds(float(ev.min()), float(ev.max()), float(lambda_c),
                       float(lambda_g), float(disturbance_cap))


@dataclass(frozen=True)
class SinusoidDisturbance:
    """Per-joint ``amplitude * sin(frequency * t + phase)``."""

    amplitude: tuple
    frequency: tuple
    phase: tuple

    def __call__(self, t: float) -> np.ndarray:
        A, w, p = (np.asarray(x, dtype=float) for x in
                   (self.amplitude, self.frequency, self.phase))
        return A * np.sin(w * t + p)

    @property
    def cap(self) -> float:
        """Upper bound on the 2-norm of the disturbance."""
        return float(np.linalg.norm(self.amplitude))

    def arrays(self):
        return tuple(np.asarray(x, dtype=float) for x in
                     (self.amplitude, self.frequency, self.phase))


def no_disturbance(m: int = 2) -> SinusoidDisturbance:
    return SinusoidDisturbance((0.0,) * m, (0.0,) * m, (0.0,) * m)


def example_disturbance() -> SinusoidDisturbance:
    """tau_d(t) = 2 (sin t, cos 2t)."""
    return SinusoidDisturbance((2.0, 2.0), (1.0, 2.0), (0.0, math.pi / 2))


@dataclass(frozen=True)
class TargetSpec:
    position_fn: Callable
    velocity_fn: Callable
    accel_fn: Callable
    gamma1: float
    gamma2: float
    params: dict = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return len(np.atleast_1d(self.position_fn(0.0)))


def ramp_sine_target(offset, slope, amplitude, frequency, phase) -> TargetSpec:
    """Per-component ``offset + slope t + amplitude sin(frequency t + phase)``."""
    o, s, A, w, p = (np.asarray(x, dtype=float) for x in
                     (offset, slope, amplitude, frequency, phase))
    if not (o.shape == s.shape == A.shape == w.shape == p.shape) or o.ndim != 1:
        raise ValueError("target parameters must be equal-length vectors")

    def position(t):
        t = np.asarray(t, dtype=float)[..., None]
        return o + s * t + A * np.sin(w * t + p)

    def velocity(t):
        t = np.asarray(t, dtype=float)[..., None]
        return s + A * w * np.cos(w * t + p) + 0.0 * t

    def accel(t):
        t = np.asarray(t, dtype=float)[..., None]
        return -A * w**2 * np.sin(w * t + p) + 0.0 * t

    gamma1 = float(np.max(np.abs(s) + np.abs(A * w)))
    gamma2 = float(np.max(np.abs(A * w**2)))
    params = {"kind": "ramp-sine", "offset": o.tolist(), "slope": s.tolist(),
              "amplitude": A.tolist(), "frequency": w.tolist(), "phase": p.tolist()}
    return TargetSpec(position, velocity, accel, gamma1, gamma2, params)


def static_target(position) -> TargetSpec:
    z = [0.0] * len(position)
    return ramp_sine_target(position, z, z, z, z)


def example_target() -> TargetSpec:
    """eps0(t) = (2t + sin t, -2t - cos t)."""
    return ramp_sine_target((0.0, 0.0), (2.0, -2.0), (1.0, 1.0), (1.0, 1.0),
                            (0.0, -math.pi / 2))


def check_target(target: TargetSpec, times, rtol: float = 1e-6) -> None:
    """Finite-difference derivative consistency and the gamma bounds."""
    times = np.asarray(times, dtype=float)
    step = 1e-5
    for fn, dfn, name in ((target.position_fn, target.velocity_fn, "velocity"),
                          (target.velocity_fn, target.accel_fn, "accel")):
        fd = (fn(times + step) - fn(times - step)) / (2 * step)
        exact = dfn(times)
        scale = np.maximum(1.0, np.abs(exact))
        if np.any(np.abs(fd - exact) > rtol * scale):
            raise ValueError(f"{name}_fn is not the derivative of its parent")
    if np.any(np.abs(target.velocity_fn(times)) > target.gamma1 + 1e-12):
        raise ValueError("velocity exceeds gamma1")
    if np.any(np.abs(target.accel_fn(times)) > target.gamma2 + 1e-12):
        raise ValueError("acceleration exceeds gamma2")

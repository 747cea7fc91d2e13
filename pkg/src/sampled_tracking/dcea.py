"""Distributed controller-estimator: PD torque plus impulsive estimator.

Between samples each estimator drifts exactly (eps' = ups, ups' = 0).  At a
sampling instant t_k the estimates jump using only the left-limit snapshot
of every neighbour; node 0 contributes the exactly sampled target.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .topology import Topology


class Order(enum.Enum):
    FIRST = "first"
    SECOND = "second"

    @classmethod
    def parse(cls, value) -> "Order":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        aliases = {"first": cls.FIRST, "firstorder": cls.FIRST, "1": cls.FIRST,
                   "second": cls.SECOND, "secondorder": cls.SECOND, "2": cls.SECOND}
        if key not in aliases:
            raise ValueError(f"unknown DCEA order {value!r}")
        return aliases[key]


class DimensionMismatch(ValueError):
    pass


def _as_gain_stack(K, n: int, m: int) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = float(K) * np.eye(m)
    if K.ndim == 2:
        K = np.broadcast_to(K, (n, m, m))
    if K.shape != (n, m, m):
        raise DimensionMismatch(f"gain stack must be ({n}, {m}, {m}), got {K.shape}")
    return np.array(K)


@dataclass(frozen=True, eq=False)
class DceaConfig:
    order: Order
    alpha: float
    beta: float
    h: float
    Kp: np.ndarray
    Kd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "order", Order.parse(self.order))
        for name in ("alpha", "beta", "h"):
            v = float(getattr(self, name))
            if not (v > 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be positive, got {v}")
            object.__setattr__(self, name, v)
        Kp = np.asarray(self.Kp, dtype=float)
        Kd = np.asarray(self.Kd, dtype=float)
        if Kp.ndim != 3 or Kp.shape != Kd.shape or Kp.shape[1] != Kp.shape[2]:
            raise DimensionMismatch("Kp and Kd must both be (n, m, m) stacks")
        for name, K in (("Kp", Kp), ("Kd", Kd)):
            if not np.allclose(K, np.swapaxes(K, 1, 2), rtol=0, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(K).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        object.__setattr__(self, "Kp", Kp)
        object.__setattr__(self, "Kd", Kd)

    @classmethod
    def uniform(cls, order, alpha, beta, h, n, m=2, kp=200.0, kd=300.0):
        return cls(order, alpha, beta, h, _as_gain_stack(kp, n, m),
                   _as_gain_stack(kd, n, m))

    @property
    def n(self) -> int:
        return self.Kp.shape[0]

    @property
    def m(self) -> int:
        return self.Kp.shape[1]

    def with_(self, **changes) -> "DceaConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class EstimatorState:
    eps: np.ndarray
    ups: np.ndarray

    def __post_init__(self):
        eps = np.array(self.eps, dtype=float)
        ups = np.array(self.ups, dtype=float)
        if eps.ndim != 2 or eps.shape != ups.shape:
            raise DimensionMismatch("eps and ups must be equal (n, m) arrays")
        if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(ups))):
            raise ValueError("estimator state must be finite")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "ups", ups)


def control_torque(cfg: DceaConfig, i: int, eps_i, ups_i, q_i, qdot_i) -> np.ndarray:
    return (cfg.Kp[i] @ (np.asarray(eps_i) - q_i)
            + cfg.Kd[i] @ (np.asarray(ups_i) - qdot_i))


def control_torques(cfg: DceaConfig, eps, ups, q, qdot) -> np.ndarray:
    """Torques of all robots at once; arrays are (..., n, m)."""
    return (np.einsum("nij,...nj->...ni", cfg.Kp, eps - q)
            + np.einsum("nij,...nj->...ni", cfg.Kd, ups - qdot))


def estimator_flow(state: EstimatorState, dt: float) -> EstimatorState:
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    return EstimatorState(state.eps + dt * state.ups, state.ups)


def _disagreement(t: Topology, X: np.ndarray, x0) -> np.ndarray:
    """Rows sum_j (w_ij / varpi_i)(x_j - x_i) over j in {0..n}."""
    x0 = np.asarray(x0, dtype=float)
    return (t.What @ X + np.outer(t.zeta, x0)) / t.varpi[:, None] - X


def _check_dims(t: Topology, state: EstimatorState, target_eps, target_ups):
    n, m = state.eps.shape
    if n != t.n:
        raise DimensionMismatch(f"state has {n} robots, topology has {t.n}")
    if np.shape(target_eps) != (m,) or np.shape(target_ups) != (m,):
        raise DimensionMismatch("target samples must be length-m vectors")


def first_order_jump(t: Topology, cfg: DceaConfig, state: EstimatorState,
                     target_eps, target_ups) -> EstimatorState:
    _check_dims(t, state, target_eps, target_ups)
    d_eps = _disagreement(t, state.eps, target_eps)
    d_ups = _disagreement(t, state.ups, target_ups)
    return EstimatorState(state.eps + cfg.alpha * d_eps, state.ups + cfg.beta * d_ups)


def second_order_jump(t: Topology, cfg: DceaConfig, state: EstimatorState,
                      target_eps, target_ups) -> EstimatorState:
    _check_dims(t, state, target_eps, target_ups)
    d_eps = _disagreement(t, state.eps, target_eps)
    d_ups = _disagreement(t, state.ups, target_ups)
    return EstimatorState(state.eps,
                          state.ups + cfg.alpha * d_eps + cfg.beta * d_ups)


def jump(t: Topology, cfg: DceaConfig, state: EstimatorState,
         target_eps, target_ups) -> EstimatorState:
    fn = first_order_jump if cfg.order is Order.FIRST else second_order_jump
    return fn(t, cfg, state, target_eps, target_ups)


def transition_blocks(D: np.ndarray, order: Order, alpha: float, beta: float,
                      h: float) -> np.ndarray:
    """The 2n x 2n estimator transition matrix before the Kronecker lift."""
    n = D.shape[0]
    I = np.eye(n)
    P = (1 - beta) * I + beta * D
    if Order.parse(order) is Order.FIRST:
        top = np.hstack([(1 - alpha) * I + alpha * D, h * P])
        bottom = np.hstack([np.zeros((n, n)), P])
    else:
        top = np.hstack([(1 - alpha * h) * I + alpha * h * D, h * P])
        bottom = np.hstack([-alpha * I + alpha * D, P])
    return np.vstack([top, bottom])


def estimator_transition_matrix(t: Topology, cfg: DceaConfig, m: int) -> np.ndarray:
    """Lambda (first order) or Gamma (second order), acting on col(eps_bar, ups_bar)."""
    return np.kron(transition_blocks(t.D, cfg.order, cfg.alpha, cfg.beta, cfg.h),
                   np.eye(m))


def velocity_matrix(t: Topology, beta: float, m: int) -> np.ndarray:
    """P = (1 - beta) I + beta D (x) I_m."""
    return (1 - beta) * np.eye(t.n * m) + beta * np.kron(t.D, np.eye(m))


def stack_errors(eps_bar: np.ndarray, ups_bar: np.ndarray) -> np.ndarray:
    """x = col(eps_bar_1..n, ups_bar_1..n) from (n, m) arrays."""
    return np.concatenate([np.ravel(eps_bar), np.ravel(ups_bar)])


def target_increment(target, t_k: float, h: float, n: int) -> np.ndarray:
    """Forcing term Delta(k) of the sampled error recursion."""
    e_k, e_k1 = target.position_fn(t_k), target.position_fn(t_k + h)
    v_k, v_k1 = target.velocity_fn(t_k), target.velocity_fn(t_k + h)
    d1 = e_k - e_k1 + h * v_k
    d2 = v_k - v_k1
    return np.concatenate([np.tile(d1, n), np.tile(d2, n)])

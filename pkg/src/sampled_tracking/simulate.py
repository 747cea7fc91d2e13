"""Hybrid closed-loop simulation: RK4 robot flow, exact estimator drift, jumps.

Timeline: no jump at t0; the estimators drift over (t0, t1], jump at t1 from
their left limits, and so on.  The trace stores two records at every t_k:
the left limit (``pre_jump``) and the post-jump value.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernel
from .dcea import DceaConfig, EstimatorState, control_torques, jump
from .models import (RobotModel, SinusoidDisturbance, TargetSpec, forward_dynamics,
                     mass_matrix, model_bounds, no_disturbance)
from .topology import Topology

FLOW, PRE_JUMP, POST_JUMP = 0, 1, 2
KIND_NAMES = ("flow", "pre_jump", "post_jump")
DIVERGENCE_GUARD = 1e9
GROWTH_FACTOR = 10.0


class NonDividingStep(ValueError):
    pass


class EmptyWindow(ValueError):
    pass


@dataclass
class HybridState:
    time: float
    q: np.ndarray
    qdot: np.ndarray
    est: EstimatorState

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)
        self.qdot = np.array(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape or self.q.shape != self.est.eps.shape:
            raise ValueError("q, qdot and the estimates must share one (n, m) shape")


def random_initial_state(n: int, m: int, rng: np.random.Generator,
                         low: float = -25.0, high: float = 25.0,
                         t0: float = 0.0) -> HybridState:
    """Every entry of eps, ups, q, qdot drawn uniformly from [low, high]."""
    eps = rng.uniform(low, high, (n, m))
    ups = rng.uniform(low, high, (n, m))
    q = rng.uniform(low, high, (n, m))
    qdot = rng.uniform(low, high, (n, m))
    return HybridState(t0, q, qdot, EstimatorState(eps, ups))


@dataclass
class Trace:
    times: np.ndarray
    kinds: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    eps: np.ndarray
    ups: np.ndarray
    sample_times: np.ndarray
    target: TargetSpec = field(repr=False)
    cfg: DceaConfig = field(repr=False)
    diverged: bool = False
    diverged_at: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def m(self) -> int:
        return self.q.shape[2]

    def target_position(self) -> np.ndarray:
        return self.target.position_fn(self.times)[:, None, :]

    def target_velocity(self) -> np.ndarray:
        return self.target.velocity_fn(self.times)[:, None, :]

    @property
    def e(self) -> np.ndarray:
        return self.q - self.target_position()

    @property
    def edot(self) -> np.ndarray:
        return self.qdot - self.target_velocity()

    @property
    def eps_bar(self) -> np.ndarray:
        return self.eps - self.target_position()

    @property
    def ups_bar(self) -> np.ndarray:
        return self.ups - self.target_velocity()

    @property
    def tau(self) -> np.ndarray:
        return control_torques(self.cfg, self.eps, self.ups, self.q, self.qdot)

    def at_kind(self, kind: int) -> np.ndarray:
        return np.flatnonzero(self.kinds == kind)

    def to_csv(self) -> str:
        """Long-format trace: one row per (record, robot)."""
        m = self.m
        header = (["time", "kind", "robot"] + [f"q{c + 1}" for c in range(m)]
                  + [f"qd{c + 1}" for c in range(m)] + [f"eps{c + 1}" for c in range(m)]
                  + [f"ups{c + 1}" for c in range(m)] + ["e_norm2", "edot_norm2"])
        e_norm = np.linalg.norm(self.e, axis=2)
        ed_norm = np.linalg.norm(self.edot, axis=2)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        fmt = "{:.17g}".format
        for r in range(len(self.times)):
            t = fmt(self.times[r])
            kind = KIND_NAMES[self.kinds[r]]
            for i in range(self.n):
                w.writerow([t, kind, i + 1,
                            *map(fmt, self.q[r, i]), *map(fmt, self.qdot[r, i]),
                            *map(fmt, self.eps[r, i]), *map(fmt, self.ups[r, i]),
                            fmt(e_norm[r, i]), fmt(ed_norm[r, i])])
        return buf.getvalue()


def _as_list(obj, n, kind):
    if isinstance(obj, kind):
        return [obj] * n
    seq = list(obj)
    if len(seq) != n:
        raise ValueError(f"expected {n} entries of {kind.__name__}, got {len(seq)}")
    return seq


def default_substeps(h: float, models: Sequence[RobotModel], cfg: DceaConfig,
                     init: HybridState) -> int:
    """Substeps per sample period keeping RK4 well inside its stability region.

    The closed loop is stiff: its fastest mode is roughly lambda_max(Kd)/lambda_m,
    plus a Coriolis contribution that grows with the joint speed.
    """
    m = cfg.m
    vscale = math.sqrt(m) * float(max(np.abs(init.qdot).max(), np.abs(init.est.ups).max(), 1.0))
    rate = 0.0
    for i, model in enumerate(models):
        with warnings.catch_warnings():
            # only the inertia and Coriolis bounds matter here
            warnings.simplefilter("ignore", UserWarning)
            b = model_bounds(model, 1.0)
        kd = np.linalg.eigvalsh(cfg.Kd[i])[-1]
        kp = np.linalg.eigvalsh(cfg.Kp[i])[-1]
        rate = max(rate, kd / b.lambda_m + math.sqrt(kp / b.lambda_m)
                   + 2 * b.lambda_c * vscale / b.lambda_m)
    return max(20, math.ceil(h * rate))


def substeps_for(h: float, dt: float) -> int:
    ratio = h / dt
    nsub = round(ratio)
    if nsub < 1 or abs(ratio - nsub) > 1e-9 * max(1.0, ratio):
        raise NonDividingStep(f"dt = {dt} does not divide h = {h}")
    return nsub


def run_scenario(topology, models, target: TargetSpec, cfg: DceaConfig,
                 init: HybridState, t_end: float, dt: Optional[float] = None,
                 disturbance: Optional[SinusoidDisturbance] = None,
                 record_stride: Optional[int] = None,
                 guard: float = DIVERGENCE_GUARD,
                 metadata: Optional[dict] = None) -> Trace:
    """Simulate the networked robots under the configured DCEA.

    ``topology`` may be a single Topology or a schedule; jump k uses entry
    (k - 1) modulo the schedule length.
    """
    schedule = [topology] if isinstance(topology, Topology) else list(topology)
    n, m = init.q.shape
    if m != 2:
        raise ValueError("the manipulator model has exactly 2 joints")
    if any(t.n != n for t in schedule) or cfg.n != n:
        raise ValueError("topology, gains and initial state disagree on n")
    models = _as_list(models, n, RobotModel)
    disturbance = disturbance or no_disturbance(m)
    h, t0 = cfg.h, float(init.time)
    if t_end < t0:
        raise ValueError("t_end precedes the initial time")
    nsub = default_substeps(h, models, cfg, init) if dt is None else substeps_for(h, dt)
    stride = record_stride or max(1, nsub // 20)
    n_samples = int(math.floor((t_end - t0) / h + 1e-9))
    tail = max(0.0, (t_end - t0) - n_samples * h)
    tail_sub = int(math.floor(tail / (h / nsub) + 1e-9))
    cap = 1 + n_samples * (2 + nsub // stride) + tail_sub // stride + 1

    times = np.empty(cap)
    kinds = np.zeros(cap, dtype=np.int8)
    Q, QD, EPS, UPS = (np.empty((cap, n, m)) for _ in range(4))
    params = np.stack([mdl.params() for mdl in models])
    dA, dw, dph = disturbance.arrays()
    Kp, Kd = np.ascontiguousarray(cfg.Kp), np.ascontiguousarray(cfg.Kd)

    q = init.q.copy()
    qd = init.qdot.copy()
    est = init.est
    row = 0

    def put(t, kind, eps, ups):
        nonlocal row
        times[row] = t
        kinds[row] = kind
        Q[row], QD[row], EPS[row], UPS[row] = q, qd, eps, ups
        row += 1

    put(t0, FLOW, est.eps, est.ups)
    diverged_at = None
    segments = [(k, h, nsub) for k in range(1, n_samples + 1)]
    if tail_sub:
        segments.append((n_samples + 1, tail_sub * h / nsub, tail_sub))
    for k, seg_len, seg_sub in segments:
        t_start = t0 + (k - 1) * h
        start_row = row
        status, row = _kernel.integrate_segment(
            q, qd, est.eps, est.ups, t_start, seg_len, seg_sub, params, Kp, Kd,
            dA, dw, dph, stride, times, Q, QD, EPS, row, guard)
        UPS[start_row:row] = est.ups
        if status:
            diverged_at = t_start + seg_len * status / seg_sub
            break
        t_now = t_start + seg_len
        left = EstimatorState(est.eps + seg_len * est.ups, est.ups)
        if seg_sub != nsub or k > n_samples:
            put(t_now, FLOW, left.eps, left.ups)
            break
        t_k = t0 + k * h
        put(t_k, PRE_JUMP, left.eps, left.ups)
        topo = schedule[(k - 1) % len(schedule)]
        eps0 = target.position_fn(t_k)
        ups0 = target.velocity_fn(t_k)
        try:
            est = jump(topo, cfg, left, eps0, ups0)
        except ValueError:
            diverged_at = t_k
            break
        put(t_k, POST_JUMP, est.eps, est.ups)
        if max(np.abs(est.eps).max(), np.abs(est.ups).max()) > guard:
            diverged_at = t_k
            break

    sample_times = t0 + h * np.arange(1, n_samples + 1)
    return Trace(times[:row].copy(), kinds[:row].copy(), Q[:row].copy(), QD[:row].copy(),
                 EPS[:row].copy(), UPS[:row].copy(), sample_times, target, cfg,
                 diverged=diverged_at is not None, diverged_at=diverged_at,
                 metadata=dict(metadata or {}))


@dataclass
class Metrics:
    steady_window: tuple
    sup_e: float
    sup_edot: float
    sup_eps_bar_inf: float
    sup_ups_bar_inf: float
    diverged: bool
    initial_eps_bar_inf: float = float("nan")
    growth_ratio: float = float("nan")
    guard_tripped: bool = False

    def to_record(self) -> dict:
        return {
            "steady_window": list(self.steady_window),
            "sup_e": self.sup_e,
            "sup_edot": self.sup_edot,
            "sup_eps_bar_inf": self.sup_eps_bar_inf,
            "sup_ups_bar_inf": self.sup_ups_bar_inf,
            "diverged": self.diverged,
            "initial_eps_bar_inf": self.initial_eps_bar_inf,
            "growth_ratio": self.growth_ratio,
            "guard_tripped": self.guard_tripped,
        }


def metrics(trace: Trace, window_fraction: float = 0.2) -> Metrics:
    """Steady-state sups over the final ``window_fraction`` of the run.

    A run counts as diverged when the guard tripped or the windowed
    sup ||eps_bar||_inf reached GROWTH_FACTOR times its initial value.
    """
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    if len(trace.times) == 0:
        raise EmptyWindow("empty trace")
    t_first, t_last = trace.times[0], trace.times[-1]
    t_lo = t_last - window_fraction * (t_last - t_first)
    sel = trace.times >= t_lo
    if not sel.any():
        raise EmptyWindow("no records inside the steady-state window")
    pos = trace.target.position_fn(trace.times[sel])[:, None, :]
    vel = trace.target.velocity_fn(trace.times[sel])[:, None, :]
    e = trace.q[sel] - pos
    edot = trace.qdot[sel] - vel
    eb = trace.eps[sel] - pos
    ub = trace.ups[sel] - vel
    sup_eps = float(np.abs(eb).max())
    init_eps = float(np.abs(trace.eps[0] - trace.target.position_fn(t_first)).max())
    ratio = sup_eps / init_eps if init_eps > 0 else (math.inf if sup_eps > 0 else 0.0)
    guard = bool(trace.diverged)
    return Metrics(
        steady_window=(float(t_lo), float(t_last)),
        sup_e=float(np.linalg.norm(e, axis=2).max()),
        sup_edot=float(np.linalg.norm(edot, axis=2).max()),
        sup_eps_bar_inf=sup_eps,
        sup_ups_bar_inf=float(np.abs(ub).max()),
        diverged=guard or ratio >= GROWTH_FACTOR,
        initial_eps_bar_inf=init_eps,
        growth_ratio=float(ratio),
        guard_tripped=guard,
    )


def _log_cosh(x):
    return np.logaddexp(x, -x) - math.log(2.0)


def lyapunov_value(model: RobotModel, Kp, Kd, q, e, edot) -> float:
    M = mass_matrix(model, q)
    th = np.tanh(e)
    return float(0.5 * edot @ M @ edot + edot @ M @ th + 0.5 * e @ Kp @ e
                 + np.abs(Kd @ _log_cosh(e)).sum())


def lyapunov_diagnostic(trace: Trace, robot: int, model: RobotModel,
                        cfg: DceaConfig) -> np.ndarray:
    """V_i at every record of the trace (robot index is 0-based)."""
    lam_M = model_bounds(model, 1.0).lambda_M
    if np.linalg.eigvalsh(cfg.Kp[robot])[0] < 2 * lam_M:
        warnings.warn("lambda_min(Kp) < 2 lambda_M: V is not guaranteed positive definite",
                      stacklevel=2)
    e = trace.e[:, robot]
    ed = trace.edot[:, robot]
    q = trace.q[:, robot]
    return np.array([lyapunov_value(model, cfg.Kp[robot], cfg.Kd[robot], q[r], e[r], ed[r])
                     for r in range(len(trace.times))])


def rk4_step(f: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def reference_segment(models, cfg: DceaConfig, q, qdot, eps, ups, t_start: float,
                      seg_len: float, nsub: int,
                      disturbance: Optional[SinusoidDisturbance] = None):
    """Slow pure-numpy counterpart of the compiled segment integrator."""
    n, m = np.shape(q)
    models = _as_list(models, n, RobotModel)
    disturbance = disturbance or no_disturbance(m)
    q = np.array(q, dtype=float)
    qdot = np.array(qdot, dtype=float)
    for i in range(n):
        def f(s, y, i=i):
            qi, qdi = y[:m], y[m:]
            tau = cfg.Kp[i] @ (eps[i] + s * ups[i] - qi) + cfg.Kd[i] @ (ups[i] - qdi)
            acc = forward_dynamics(models[i], qi, qdi, tau, disturbance(t_start + s))
            return np.concatenate([qdi, acc])

        y = np.concatenate([q[i], qdot[i]])
        for j in range(nsub):
            s0 = seg_len * j / nsub
            y = rk4_step(f, s0, y, seg_len * (j + 1) / nsub - s0)
        q[i], qdot[i] = y[:m], y[m:]
    return q, qdot


def integrator_order_check(dt: float = 1e-2, refine: float = 2.0, t_end: float = 5.0,
                           omega: float = 2.0, forcing: float = 1.0,
                           forcing_freq: float = 1.0) -> float:
    """Observed convergence order of rk4_step on x'' + omega^2 x = F cos(W t).

    Integrates at dt and dt / refine and compares both endpoints with the
    closed-form solution.
    """
    if not refine > 1:
        raise ValueError("refine must exceed 1; equal step sizes give no ratio")
    if omega == forcing_freq:
        raise ValueError("resonant forcing has no bounded closed form here")
    x0, v0 = 1.0, 0.0
    part = forcing / (omega**2 - forcing_freq**2) if omega else 0.0

    def exact(t):
        if omega == 0:
            return np.array([x0 + v0 * t, v0])
        a = x0 - part
        b = v0 / omega
        x = a * math.cos(omega * t) + b * math.sin(omega * t) + part * math.cos(forcing_freq * t)
        v = (-a * omega * math.sin(omega * t) + b * omega * math.cos(omega * t)
             - part * forcing_freq * math.sin(forcing_freq * t))
        return np.array([x, v])

    def f(t, y):
        return np.array([y[1], -omega**2 * y[0] + forcing * math.cos(forcing_freq * t)])

    def error(step):
        steps = int(round(t_end / step))
        y = np.array([x0, v0])
        for j in range(steps):
            y = rk4_step(f, j * step, y, step)
        return float(np.max(np.abs(y - exact(steps * step))))

    e1, e2 = error(dt), error(dt / refine)
    if e1 < 1e-13 or e2 == 0.0:
        raise ValueError("the test problem is integrated exactly; order is undefined")
    return math.log(e1 / e2) / math.log(refine)

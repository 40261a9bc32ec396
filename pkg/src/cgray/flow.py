"""Reduced Anomaly flow for the dilaton on the genus-3 curve.

Under the ansatz the flow becomes the scalar evolution

    d/dt e^f = Delta u - 2 kappa u,   u = e^f + alpha' kappa e^{-f} / 2,

discretized as ``M_lam d(ef)/dt = -K_FS u + 2 M_FS u`` and integrated with
explicit RK4 under a frozen-coefficient CFL restriction.  Only functions on
the sphere (the involution-invariant sector) are evolved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Field, SphereMesh, integrate
from .surface import BranchConfiguration, neg_kappa_on_sphere

__all__ = [
    "FlowState",
    "FlowTrace",
    "Thresholds",
    "ReducedFlow",
    "flow_rhs",
    "step",
    "run",
    "fit_growth",
    "linear_fit",
]

log = logging.getLogger(__name__)

MAX_HALVINGS = 20


@dataclass
class FlowState:
    time: float
    ef: np.ndarray
    alpha_prime: float
    dt_last: float = 0.0

    def __post_init__(self):
        self.ef = np.asarray(self.ef, dtype=float)


@dataclass
class Thresholds:
    """Event detection settings.

    ``eps_sing`` is relative to the initial minimum of ``e^f``; ``eps_stat``
    is the RHS norm relative to ``|e^f|`` (both in the ``M_lam`` norm).
    """

    eps_sing: float = 1e-3
    eps_stat: float = 1e-3
    stat_steps: int = 100
    exp_r2: float = 0.999
    exp_window: int = 1000
    exp_rate_tol: float = 1e-3
    sample_every: int = 10
    max_steps: int = 2_000_000

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))


@dataclass
class FlowTrace:
    samples: list = field(default_factory=list)  # (t, min ef, max ef, L1, residual)
    events: list = field(default_factory=list)
    terminal_reason: str = "horizon"
    final: FlowState | None = None
    steps: int = 0
    snapshots: list = field(default_factory=list)  # (t, ef copy)

    @property
    def times(self):
        return np.array([s[0] for s in self.samples])

    @property
    def l1(self):
        return np.array([s[3] for s in self.samples])

    def to_json(self) -> dict:
        return {
            "terminal_reason": self.terminal_reason,
            "steps": self.steps,
            "events": self.events,
            "samples": [list(map(float, s)) for s in self.samples],
        }


def linear_fit(x, y):
    """Least-squares slope, intercept and coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 0.0
    return float(slope), float(icpt), float(r2)


def fit_growth(trace: FlowTrace, min_samples: int = 50) -> dict:
    """Exponential rate of ``int e^f omega_hat`` over the trailing half of the trace."""
    t = trace.times
    l1 = trace.l1
    half = len(t) // 2
    t, l1 = t[half:], l1[half:]
    if len(t) < min_samples or np.any(l1 <= 0) or np.ptp(t) == 0:
        raise ValueError(f"degenerate window: {len(t)} samples")
    rate, _, r2 = linear_fit(t, np.log(l1))
    return {"rate": rate, "r2": r2}


class ReducedFlow:
    """Precomputed operators for one (configuration, mesh, alpha') triple."""

    def __init__(self, cfg: BranchConfiguration, mesh: SphereMesh, alpha_prime: float):
        if not alpha_prime > 0:
            raise ValueError("alpha' must be positive")
        self.cfg = cfg
        self.mesh = mesh
        self.alpha_prime = float(alpha_prime)
        self.K = mesh.stiffness
        self.m_fs = mesh.fs_mass
        self.m_lam = mesh.lam_mass
        self.neg_kappa = neg_kappa_on_sphere(cfg, mesh.vertices)
        self.h_min = mesh.h_min
        # M_lam^-1 (2 M_FS - K_FS), assembled once
        self.L = (sp.diags(1.0 / self.m_lam) @ (sp.diags(2.0 * self.m_fs) - self.K)).tocsr()
        self._half_ak = 0.5 * self.alpha_prime * self.neg_kappa

    def u_of(self, ef):
        return ef - self._half_ak / ef

    def rhs(self, ef):
        return self.L @ self.u_of(ef)

    def norm(self, x):
        return float(np.sqrt(np.dot(x * x, self.m_lam)))

    def dt(self, ef, dt_safety):
        # pointwise lam^-1 = -kappa; diffusivity factor 1 - alpha' kappa e^{-2f} / 2 >= 1
        coef = self.neg_kappa * (1.0 + 0.5 * self.alpha_prime * self.neg_kappa / ef ** 2)
        return dt_safety * self.h_min ** 2 / float(np.max(coef))

    def rk4(self, ef, dt, k1=None):
        k1 = self.rhs(ef) if k1 is None else k1
        k2 = self.rhs(ef + 0.5 * dt * k1)
        k3 = self.rhs(ef + 0.5 * dt * k2)
        k4 = self.rhs(ef + dt * k3)
        return ef + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step(self, state: FlowState, dt_safety: float = 0.25, dt=None, k1=None) -> FlowState:
        """One RK4 step; halves ``dt`` until the result stays positive and finite.

        ``k1`` may pass in the already evaluated ``rhs(state.ef)``.
        """
        if np.any(state.ef <= 0):
            raise ValueError("e^f must be positive")
        dt = self.dt(state.ef, dt_safety) if dt is None else dt
        k1 = self.rhs(state.ef) if k1 is None else k1
        for _ in range(MAX_HALVINGS):
            new = self.rk4(state.ef, dt, k1)
            if np.all(np.isfinite(new)) and np.all(new > 0):
                return FlowState(state.time + dt, new, state.alpha_prime, dt)
            dt *= 0.5
        raise FloatingPointError("step rejected after repeated halving")

    def l1(self, ef):
        return integrate(self.mesh, ef, self.m_lam)

    def _sample(self, state):
        r = self.rhs(state.ef)
        ef = state.ef
        return (state.time, float(ef.min()), float(ef.max()), self.l1(ef), self.norm(r))

    def run(self, init, horizon: float, dt_safety: float = 0.25,
            thresholds: Thresholds | None = None, snapshot_every: int = 0) -> FlowTrace:
        th = thresholds or Thresholds()
        ef0 = np.asarray(init.values if isinstance(init, Field) else init, dtype=float)
        if np.any(ef0 <= 0):
            raise ValueError("initial e^f must be positive")
        state = FlowState(0.0, ef0.copy(), self.alpha_prime)
        trace = FlowTrace()
        trace.samples.append(self._sample(state))
        if snapshot_every:
            trace.snapshots.append((0.0, ef0.copy()))
        sing_level = th.eps_sing * float(ef0.min())
        quiet = 0
        n = 0
        k1 = None
        while state.time < horizon:
            if n >= th.max_steps:
                trace.terminal_reason = "max_steps"
                break
            dt = min(self.dt(state.ef, dt_safety), horizon - state.time)
            try:
                state = self.step(state, dt=dt, k1=k1)
            except FloatingPointError:
                self._singular(trace, state, "step_rejected")
                break
            n += 1
            if snapshot_every and n % snapshot_every == 0:
                trace.snapshots.append((state.time, state.ef.copy()))

            if state.ef.min() < sing_level:
                self._singular(trace, state, "threshold")
                break

            k1 = self.rhs(state.ef)  # reused as the next step's first stage
            r = self.norm(k1)
            quiet = quiet + 1 if r < th.eps_stat * self.norm(state.ef) else 0
            if quiet >= th.stat_steps:
                trace.events.append({"type": "stationary", "time": state.time,
                                     "payload": {"rhs_norm": r}})
                trace.terminal_reason = "stationary"
                break

            if n % th.sample_every == 0:
                trace.samples.append(self._sample(state))
                ev = self._exponential(trace, th)
                if ev is not None:
                    trace.events.append(ev)
                    trace.terminal_reason = "exponential"
                    break
        if trace.samples[-1][0] != state.time:
            trace.samples.append(self._sample(state))
        trace.final = state
        trace.steps = n
        return trace

    def _singular(self, trace, state, why):
        i = int(np.argmin(state.ef))
        z = complex(self.mesh.zeta[i])
        trace.events.append({
            "type": "singularity",
            "time": state.time,
            "payload": {
                "reason": why,
                "min_ef": float(state.ef.min()),
                "argmin_vertex": i,
                "argmin_point": [float(x) for x in self.mesh.vertices[i]],
                "argmin_zeta": [z.real, z.imag] if np.isfinite(abs(z)) else None,
            },
        })
        trace.terminal_reason = "singularity"

    @staticmethod
    def _exponential(trace, th):
        w = th.exp_window
        if len(trace.samples) < w:
            return None
        tail = trace.samples[-w:]
        t = np.array([s[0] for s in tail])
        l1 = np.array([s[3] for s in tail])
        if np.any(l1 <= 0):
            return None
        y = np.log(l1)
        rate, _, r2 = linear_fit(t, y)
        if rate <= 0 or r2 < th.exp_r2:
            return None
        h = w // 2
        r_a = linear_fit(t[:h], y[:h])[0]
        r_b = linear_fit(t[h:], y[h:])[0]
        if abs(r_a - r_b) > th.exp_rate_tol * abs(rate):
            return None
        return {"type": "exponential", "time": float(t[-1]),
                "payload": {"rate": rate, "r2": r2, "window": [float(t[0]), float(t[-1])]}}


def flow_rhs(state: FlowState, cfg, mesh) -> Field:
    """Per-vertex ``d(e^f)/dt``."""
    if np.any(state.ef <= 0):
        raise ValueError("e^f must be positive")
    return Field(ReducedFlow(cfg, mesh, state.alpha_prime).rhs(state.ef), mesh)


def step(state: FlowState, cfg, mesh, dt_safety: float = 0.25) -> FlowState:
    return ReducedFlow(cfg, mesh, state.alpha_prime).step(state, dt_safety)


def run(cfg, mesh, init, alpha_prime, horizon, thresholds=None, dt_safety: float = 0.25,
        snapshot_every: int = 0) -> FlowTrace:
    return ReducedFlow(cfg, mesh, alpha_prime).run(init, horizon, dt_safety, thresholds,
                                                    snapshot_every)

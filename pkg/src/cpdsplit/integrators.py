"""Lie-Trotter splitting steppers for charged-particle dynamics.

All three schemes share the exact rotation subflow ``v <- exp(h*hat(omega(x))) v``
and differ in how the electric subflow is treated:

* ``S1AVF`` -- average vector field (implicit, energy preserving),
* ``S1SV``  -- linearised AVF (explicit, energy preserving for uniform ``E``),
* ``S1VP``  -- exact frozen-position flow with ``phi1`` (explicit, volume preserving).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import (FieldModel, Vec3, ZeroFieldError, as_vec3, energy, parallel_component,
                     phi1_apply, phi2_apply, rot_apply)


@dataclass(frozen=True)
class State:
    x: Vec3
    v: Vec3
    t: float = 0.0

    @classmethod
    def from_values(cls, x, v, t: float = 0.0) -> "State":
        return cls(as_vec3(x), as_vec3(v), float(t))


class SchemeId(str, enum.Enum):
    S1AVF = "S1AVF"
    S1SV = "S1SV"
    S1VP = "S1VP"

    @classmethod
    def parse(cls, name: str) -> "SchemeId":
        key = name.upper().replace("-", "").replace("_", "")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown scheme {name!r}; expected one of "
                             f"{[s.value for s in cls]}") from None


GAUSS2_NODES = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))
GAUSS2_WEIGHTS = (0.5, 0.5)


@dataclass(frozen=True)
class SolverParams:
    """Fixed-point and quadrature settings for the implicit AVF subflow.

    The fixed-point residual is the max-norm change of the position iterate,
    measured relative to ``max(1, |x|_inf)``.
    """

    fp_tol: float = 1e-14
    fp_max_iters: int = 1000
    nodes: tuple = GAUSS2_NODES
    weights: tuple = GAUSS2_WEIGHTS

    def __post_init__(self):
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if self.fp_max_iters < 1:
            raise ValueError("fp_max_iters must be at least 1")
        if len(self.nodes) != len(self.weights) or not self.nodes:
            raise ValueError("quadrature needs matching, non-empty nodes and weights")
        if abs(sum(self.weights) - 1.0) > 1e-14:
            raise ValueError("quadrature weights must sum to 1 on [0, 1]")


@dataclass(frozen=True)
class StepStats:
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True


class StepFailure(RuntimeError):
    """Fixed-point iteration did not converge."""

    def __init__(self, message, residual=math.nan, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


def phi_L(model: FieldModel, s: State, h: float) -> State:
    """Exact rotation subflow; position and clock are left untouched."""
    return State(s.x, rot_apply(model.omega(s.x), h, s.v), s.t)


def _avg_efield(model, x0, x1, p: SolverParams) -> Vec3:
    # quadrature of int_0^1 E(rho*x0 + (1-rho)*x1) drho
    acc = np.zeros(3)
    for c, w in zip(p.nodes, p.weights):
        acc += w * model.efield(c * x0 + (1.0 - c) * x1)
    return acc


def phi_NL_avf(model: FieldModel, s: State, h: float,
               p: SolverParams = SolverParams()) -> tuple[State, StepStats]:
    """AVF approximation of the drift/electric subflow.

    Only the position equation is iterated; the velocity is rebuilt from the
    converged field average, which keeps ``v1 - v0 == (2/h)(x1 - x0 - h v0)``.
    """
    x0, v0 = s.x, s.v
    base = x0 + h * v0
    half_h2 = 0.5 * h * h
    x1 = base + half_h2 * model.efield(x0)
    for it in range(1, p.fp_max_iters + 1):
        avg = _avg_efield(model, x0, x1, p)
        x_new = base + half_h2 * avg
        res = float(np.max(np.abs(x_new - x1))) / max(1.0, float(np.max(np.abs(x_new))))
        x1 = x_new
        if res <= p.fp_tol:
            break
    else:
        raise StepFailure(f"AVF fixed point not converged after {p.fp_max_iters} "
                          f"iterations (residual {res:.3e})", residual=res)
    # x1 = base + half_h2*avg exactly up to the last update, so reuse avg for v
    return State(x1, v0 + h * avg, s.t), StepStats(it, res, True)


def step_s1_avf(model: FieldModel, s: State, h: float,
                p: SolverParams = SolverParams()) -> tuple[State, StepStats]:
    rotated = phi_L(model, s, h)
    out, stats = phi_NL_avf(model, rotated, h, p)
    return replace(out, t=s.t + h), stats


def step_s1_sv(model: FieldModel, s: State, h: float) -> State:
    vr = rot_apply(model.omega(s.x), h, s.v)
    e0 = model.efield(s.x)
    x1 = s.x + h * vr + (0.5 * h * h) * e0
    v1 = vr + (0.5 * h) * (e0 + model.efield(x1))
    return State(x1, v1, s.t + h)


def step_s1_vp(model: FieldModel, s: State, h: float) -> State:
    om = model.omega(s.x)
    v1 = rot_apply(om, h, s.v) + h * phi1_apply(om, h, model.efield(s.x))
    return State(s.x + h * v1, v1, s.t + h)


def step(scheme: SchemeId, model: FieldModel, s: State, h: float,
         p: SolverParams = SolverParams()) -> tuple[State, StepStats]:
    """Advance one step with any scheme; explicit schemes report zero iterations."""
    if scheme is SchemeId.S1AVF:
        return step_s1_avf(model, s, h, p)
    if scheme is SchemeId.S1SV:
        return step_s1_sv(model, s, h), StepStats()
    if scheme is SchemeId.S1VP:
        return step_s1_vp(model, s, h), StepStats()
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass
class Trajectory:
    """Samples recorded along a run (one row per sample)."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    H: np.ndarray
    vpar: np.ndarray
    final: State
    max_iterations: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)


def _vpar_or_nan(model, s):
    try:
        return parallel_component(model.omega(s.x), s.v)
    except ZeroFieldError:
        return np.full(3, np.nan)


def integrate(scheme, model: FieldModel, s0: State, h: float, n_steps: int,
              p: SolverParams = SolverParams(), sample_every: int = 1) -> Trajectory:
    """Apply ``scheme`` ``n_steps`` times, sampling every ``sample_every`` steps.

    The final state is always recorded. A failing step re-raises
    :class:`StepFailure` with ``step`` set to the failing step index.
    """
    scheme = SchemeId.parse(scheme) if isinstance(scheme, str) else scheme
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if sample_every < 1:
        raise ValueError("sample_every must be at least 1")
    rows = [s0]
    s = s0
    max_it = 0
    for n in range(n_steps):
        try:
            s, stats = step(scheme, model, s, h, p)
        except StepFailure as exc:
            exc.step = n
            raise
        max_it = max(max_it, stats.iterations)
        if (n + 1) % sample_every == 0 or n + 1 == n_steps:
            rows.append(s)
    return Trajectory(
        t=np.array([r.t for r in rows]),
        x=np.array([r.x for r in rows]),
        v=np.array([r.v for r in rows]),
        H=np.array([energy(model, r) for r in rows]),
        vpar=np.array([_vpar_or_nan(model, r) for r in rows]),
        final=s,
        max_iterations=max_it,
        meta={"scheme": scheme.value, "h": h, "n_steps": n_steps},
    )


def analytic_constant(omega0, e0, s0: State, t: float) -> State:
    """Exact solution for uniform rotation rate ``omega0`` and field ``e0``."""
    om, e = as_vec3(omega0), as_vec3(e0)
    v = rot_apply(om, t, s0.v) + t * phi1_apply(om, t, e)
    x = s0.x + t * phi1_apply(om, t, s0.v) + (t * t) * phi2_apply(om, t, e)
    return State(x, v, s0.t + t)

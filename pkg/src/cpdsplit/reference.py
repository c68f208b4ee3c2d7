"""Adaptive Dormand-Prince 5(4) reference solver for the full dynamics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fields import FieldModel, cross
from .integrators import State


class OracleFailure(RuntimeError):
    """The reference solver could not reach the requested time."""


@dataclass(frozen=True)
class RKConfig:
    atol: float = 1e-12
    rtol: float = 1e-12
    h_init: Optional[float] = None
    h_min: float = 1e-14
    h_max: Optional[float] = None
    max_steps: int = 10 ** 8
    safety: float = 0.9

    def __post_init__(self):
        if self.atol <= 0 or self.rtol <= 0:
            raise ValueError("tolerances must be positive")
        if self.h_min <= 0:
            raise ValueError("h_min must be positive")
        if self.h_max is not None and self.h_max < self.h_min:
            raise ValueError("need h_min <= h_max")


def rhs(model: FieldModel, s: State):
    """Right-hand side ``(v, v x omega(x) + E(x))``."""
    return s.v, cross(s.v, model.omega(s.x)) + model.efield(s.x)


# Dormand-Prince tableau (FSAL: the 7th stage is evaluated at the new point)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# difference between the 5th and embedded 4th order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


@dataclass
class ReferenceStats:
    accepted: int = 0
    rejected: int = 0


def _f(model, y):
    x, v = y[:3], y[3:]
    out = np.empty(6)
    out[:3] = v
    out[3:] = cross(v, model.omega(x)) + model.efield(x)
    return out


def integrate_reference(model: FieldModel, s0: State, t_end: float,
                        cfg: RKConfig = RKConfig(), stats: Optional[ReferenceStats] = None
                        ) -> State:
    """Integrate from ``s0`` to exactly ``t_end``.

    Raises :class:`OracleFailure` when the step size drops below ``h_min`` or
    ``max_steps`` accepted steps are exceeded.
    """
    span = t_end - s0.t
    if span < 0:
        raise ValueError("t_end must not precede the initial time")
    if span == 0:
        return s0
    stats = stats if stats is not None else ReferenceStats()
    y = np.concatenate([s0.x, s0.v])
    t = s0.t
    h_max = cfg.h_max if cfg.h_max is not None else span
    k1 = _f(model, y)
    if cfg.h_init is not None:
        h = cfg.h_init
    else:
        # a small fraction of the fastest time scale at the start
        scale = max(1.0, float(np.max(np.abs(k1[3:]))), float(np.linalg.norm(model.omega(y[:3]))))
        h = 0.01 * cfg.rtol ** 0.2 / scale
    h = min(max(h, cfg.h_min), h_max)
    a2, a3, a4, a5, a6, a7 = _A[1:]
    while True:
        remaining = t_end - t
        last = h >= remaining
        if last:
            h = remaining
        k2 = _f(model, y + h * (a2[0] * k1))
        k3 = _f(model, y + h * (a3[0] * k1 + a3[1] * k2))
        k4 = _f(model, y + h * (a4[0] * k1 + a4[1] * k2 + a4[2] * k3))
        k5 = _f(model, y + h * (a5[0] * k1 + a5[1] * k2 + a5[2] * k3 + a5[3] * k4))
        k6 = _f(model, y + h * (a6[0] * k1 + a6[1] * k2 + a6[2] * k3 + a6[3] * k4
                                + a6[4] * k5))
        y_new = y + h * (a7[0] * k1 + a7[2] * k3 + a7[3] * k4 + a7[4] * k5 + a7[5] * k6)
        k7 = _f(model, y_new)
        err = h * (_E[0] * k1 + _E[2] * k3 + _E[3] * k4 + _E[4] * k5 + _E[5] * k6
                   + _E[6] * k7)
        sc = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        errn = float(np.max(np.abs(err) / sc))
        if not math.isfinite(errn):
            raise OracleFailure(f"non-finite error estimate at t={t}")
        if errn <= 1.0:
            stats.accepted += 1
            t = t_end if last else t + h
            y, k1 = y_new, k7
            if last:
                return State(y[:3].copy(), y[3:].copy(), t_end)
            if stats.accepted >= cfg.max_steps:
                raise OracleFailure(f"max_steps={cfg.max_steps} exceeded at t={t}")
            fac = 5.0 if errn == 0.0 else min(5.0, max(0.2, cfg.safety * errn ** -0.2))
        else:
            stats.rejected += 1
            fac = max(0.2, cfg.safety * errn ** -0.2)
        h = min(h * fac, h_max)
        if h < cfg.h_min:
            raise OracleFailure(f"step size underflow (h={h:.3e} < h_min) at t={t}")

"""Field models, the hat map and closed-form rotation / phi-function kernels.

Vectors are plain ``numpy`` arrays of shape ``(3,)``. A field model exposes the
*total* rotation rate ``omega(x)``: everything that multiplies ``v`` in
``v x (.)``, with the ``1/eps`` factor already applied. Steppers never see the
magnetic field and ``eps`` separately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Vec3 = np.ndarray
Mat3 = np.ndarray

#: below this angle the closed forms switch to truncated Taylor series
SMALL_ANGLE = 1e-4

PRESETS = ("problem1", "problem2", "constant")


class ZeroFieldError(ValueError):
    """Raised when a direction is requested from a vanishing field."""


def as_vec3(a) -> Vec3:
    v = np.asarray(a, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"expected 3 components, got shape {np.shape(a)}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite components")
    return v


def cross(a: Vec3, b: Vec3) -> Vec3:
    # np.cross carries a lot of overhead for single 3-vectors
    return np.array((a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]))


def hat(b: Vec3) -> Mat3:
    """Skew matrix with ``hat(b) @ w == cross(w, b)``."""
    b1, b2, b3 = (float(c) for c in b)
    return np.array([[0.0, b3, -b2],
                     [-b3, 0.0, b1],
                     [b2, -b1, 0.0]])


# Coefficient functions of theta. Each has an exact Taylor expansion in theta**2
# which is used below SMALL_ANGLE (six terms, far past double precision there).
# (t - sin t)/t^3 and (t^2/2 - 1 + cos t)/t^4 cancel much harder, so they keep
# using a longer series up to CANCELLATION_ANGLE.

CANCELLATION_ANGLE = 1.0


def _series(th2: float, coeffs) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * th2 + c
    return acc


def _taylor(start: int, terms: int = 6):
    # coefficients (-1)^k / (2k + start)!  for k < terms
    return [(-1) ** k / math.factorial(2 * k + start) for k in range(terms)]


_COS = _taylor(0)           # cos(t)
_SINC = _taylor(1)          # sin(t)/t
_ONE_MINUS_COS = _taylor(2)  # (1 - cos t)/t^2
_T_MINUS_SIN = _taylor(3)   # (t - sin t)/t^3
_COS_REM = _taylor(4)       # (t^2/2 - 1 + cos t)/t^4
_T_MINUS_SIN_LONG = _taylor(3, 12)
_COS_REM_LONG = _taylor(4, 12)


def _coefficients(theta: float):
    """Return cos, sinc, (1-cos)/t^2, (t-sin)/t^3, (t^2/2-1+cos)/t^4."""
    th2 = theta * theta
    if theta < SMALL_ANGLE:
        return (_series(th2, _COS), _series(th2, _SINC), _series(th2, _ONE_MINUS_COS),
                _series(th2, _T_MINUS_SIN), _series(th2, _COS_REM))
    s, c = math.sin(theta), math.cos(theta)
    # 2 sin^2(t/2) avoids the cancellation in 1 - cos t
    omc = 2.0 * math.sin(0.5 * theta) ** 2
    if theta < CANCELLATION_ANGLE:
        return (c, s / theta, omc / th2, _series(th2, _T_MINUS_SIN_LONG),
                _series(th2, _COS_REM_LONG))
    return (c, s / theta, omc / th2, (theta - s) / (th2 * theta),
            (0.5 * th2 - omc) / (th2 * th2))


def _combine(omega: Vec3, t: float, w: Vec3, a: float, b: float, c: float) -> Vec3:
    # a*w + b*t*(w x omega) + c*t^2*(omega.w)*omega
    tw = t * cross(w, omega)
    proj = t * t * float(omega @ w)
    return a * w + b * tw + (c * proj) * omega


def rot_apply(omega: Vec3, t: float, w: Vec3) -> Vec3:
    """Apply ``exp(t*hat(omega))`` to ``w`` by the Rodrigues formula."""
    theta = abs(t) * math.sqrt(float(omega @ omega))
    co, si, omc, _, _ = _coefficients(theta)
    return _combine(omega, t, w, co, si, omc)


def phi1_apply(omega: Vec3, t: float, w: Vec3) -> Vec3:
    """Apply ``phi1(t*hat(omega))`` with ``phi1(z) = (e^z - 1)/z``.

    Closed form of ``(1/t) * int_0^t exp(s*hat(omega)) w ds``.
    """
    theta = abs(t) * math.sqrt(float(omega @ omega))
    _, si, omc, tms, _ = _coefficients(theta)
    return _combine(omega, t, w, si, omc, tms)


def phi2_apply(omega: Vec3, t: float, w: Vec3) -> Vec3:
    """Apply ``phi2(t*hat(omega))`` with ``phi2(z) = (e^z - 1 - z)/z^2``."""
    theta = abs(t) * math.sqrt(float(omega @ omega))
    _, _, omc, tms, rem = _coefficients(theta)
    return _combine(omega, t, w, omc, tms, rem)


@dataclass(frozen=True)
class FieldModel:
    """Electromagnetic field seen by the particle.

    ``omega`` returns the total rotation rate (``B/eps`` plus any O(1) part),
    ``efield`` the electric field and ``potential`` a scalar ``U`` with
    ``efield == -grad(potential)``.
    """

    eps: float
    omega: Callable[[Vec3], Vec3]
    efield: Callable[[Vec3], Vec3]
    potential: Callable[[Vec3], float]
    label: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (0.0 < self.eps <= 1.0):
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")


def problem1(eps: float) -> FieldModel:
    """Maximal ordering scaling: ``B(eps x)/eps`` plus an O(1) term, ``U = 1/r``."""

    def omega(x):
        return np.array((math.cos(eps * x[1]) / eps - x[0],
                         (1.0 + math.sin(eps * x[2])) / eps,
                         math.cos(eps * x[0]) / eps + x[2]))

    def efield(x):
        r2 = x[0] * x[0] + x[1] * x[1]
        r3 = r2 * math.sqrt(r2)
        return np.array((x[0] / r3, x[1] / r3, 0.0))

    def potential(x):
        return 1.0 / math.sqrt(x[0] * x[0] + x[1] * x[1])

    return FieldModel(eps, omega, efield, potential, "problem1", {"eps": eps})


def problem2(eps: float) -> FieldModel:
    """General strong field ``curl(A)/eps`` with a quartic potential."""

    def omega(x):
        s = 0.5 / eps
        return np.array((s * (x[1] - x[2]), s * (x[0] + x[2]), s * (x[1] - x[0])))

    def efield(x):
        x1, x2, x3 = x[0], x[1], x[2]
        return np.array((-(3.0 * x1 * x1 + 0.8 * x1 * x1 * x1),
                         3.0 * x2 * x2 - 4.0 * x2 * x2 * x2,
                         -4.0 * x3 * x3 * x3))

    def potential(x):
        x1, x2, x3 = x[0], x[1], x[2]
        return x1 ** 3 - x2 ** 3 + x1 ** 4 / 5.0 + x2 ** 4 + x3 ** 4

    return FieldModel(eps, omega, efield, potential, "problem2", {"eps": eps})


def constant(omega0, e0, eps: float = 1.0) -> FieldModel:
    """Uniform fields: rotation rate ``omega0/eps`` and electric field ``e0``."""
    w = as_vec3(omega0) / eps
    e = as_vec3(e0)

    def omega(x):
        return w.copy()

    def efield(x):
        return e.copy()

    def potential(x):
        return -float(e @ x)

    return FieldModel(eps, omega, efield, potential, "constant",
                      {"eps": eps, "omega0": as_vec3(omega0).tolist(), "e0": e.tolist()})


def make_preset(name: str, eps: float = 1.0, omega0=(0.0, 0.0, 1.0),
                e0=(0.1, 0.05, 0.0)) -> FieldModel:
    if name == "problem1":
        return problem1(eps)
    if name == "problem2":
        return problem2(eps)
    if name == "constant":
        return constant(omega0, e0, eps)
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")


#: initial data of the benchmark problems
INITIAL_STATES = {
    "problem1": ((1 / 3, 1 / 4, 1 / 2), (2 / 5, 2 / 3, 1.0)),
    "problem2": ((0.6, 1.0, -1.0), (-1.0, 0.5, 0.6)),
    "constant": ((1.0, 0.0, 0.0), (0.0, 1.0, 0.5)),
}


def energy(model: FieldModel, s) -> float:
    """Hamiltonian ``|v|^2/2 + U(x)``."""
    return 0.5 * float(s.v @ s.v) + float(model.potential(s.x))


def parallel_component(direction: Vec3, v: Vec3) -> Vec3:
    n2 = float(direction @ direction)
    if n2 == 0.0:
        raise ZeroFieldError("field vanishes; parallel direction undefined")
    return (float(direction @ v) / n2) * direction


def v_parallel(model: FieldModel, s) -> Vec3:
    """Projection of the velocity onto the direction of ``omega(x)``."""
    return parallel_component(model.omega(s.x), s.v)


def sinc(z: float) -> float:
    return 1.0 if z == 0.0 else math.sin(z) / z


@dataclass(frozen=True)
class NonresonanceReport:
    h: float
    c: float
    argument: float
    sinc_values: tuple
    passed: bool


def check_nonresonance(model: FieldModel, x, h: float, c: float = 0.05,
                       kmax: int = 2) -> NonresonanceReport:
    """Evaluate ``|sinc(k h |omega(x)| / 2)| >= c`` for ``k = 1..kmax``."""
    if h <= 0 or c <= 0 or kmax < 1:
        raise ValueError("need h > 0, c > 0 and kmax >= 1")
    arg = 0.5 * h * float(np.linalg.norm(model.omega(as_vec3(x))))
    vals = tuple(abs(sinc(k * arg)) for k in range(1, kmax + 1))
    return NonresonanceReport(h, c, arg, vals, all(v >= c for v in vals))

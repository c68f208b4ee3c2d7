"""Error metrics, energy drift and convergence-order bookkeeping."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import FieldModel, parallel_component
from .integrators import State, Trajectory

#: reference norms below this are treated as degenerate denominators
DEGENERATE_NORM = 1e-13


class DegenerateReference(ValueError):
    """A relative error was requested against a (near) zero reference norm."""


@dataclass(frozen=True)
class ErrorRecord:
    scheme: str
    eps: float
    h: float
    err_x: float
    err_vpar: float
    err_total: float
    energy_err: float
    fp_iters_max: int
    status: str = "ok"
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def failed(cls, scheme, eps, h, message, status="failed") -> "ErrorRecord":
        nan = math.nan
        return cls(scheme, eps, h, nan, nan, nan, nan, 0, status, message)

    def as_dict(self) -> dict:
        return asdict(self)


def rel_error(numerical: State, reference: State, model: FieldModel) -> tuple[float, float]:
    """Relative position error and relative parallel-velocity error.

    Each parallel velocity is taken along the field at its own position.
    """
    nx = float(np.linalg.norm(reference.x))
    vpar_ref = parallel_component(model.omega(reference.x), reference.v)
    nv = float(np.linalg.norm(vpar_ref))
    if nx < DEGENERATE_NORM or nv < DEGENERATE_NORM:
        raise DegenerateReference(f"reference norms too small (|x|={nx:.3e}, |v_par|={nv:.3e})")
    vpar_num = parallel_component(model.omega(numerical.x), numerical.v)
    err_x = float(np.linalg.norm(numerical.x - reference.x)) / nx
    err_v = float(np.linalg.norm(vpar_num - vpar_ref)) / nv
    return err_x, err_v


def energy_error(trajectory: Trajectory, model: FieldModel) -> np.ndarray:
    """``|H_n - H_0| / |H_0|`` for every recorded sample."""
    H = np.array([0.5 * float(v @ v) + float(model.potential(x))
                  for x, v in zip(trajectory.x, trajectory.v)])
    if H[0] == 0.0:
        raise ValueError("initial energy is zero; relative energy error undefined")
    return np.abs(H - H[0]) / abs(H[0])


def slope_fit(points) -> float:
    """Least-squares slope of ``log(err)`` against ``log(h)``."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 3:
        raise ValueError("slope fit needs at least 3 points")
    if any(not (h > 0 and e > 0) for h, e in pts):
        raise ValueError("slope fit needs strictly positive h and errors")
    lh = np.log([h for h, _ in pts])
    le = np.log([e for _, e in pts])
    lh_c = lh - lh.mean()
    return float(lh_c @ (le - le.mean()) / (lh_c @ lh_c))


def uniformity_ratio(errors) -> float:
    """Max over min of ``err_total`` across eps at a fixed scheme and step."""
    vals = [r.err_total if isinstance(r, ErrorRecord) else float(r) for r in errors]
    if len(vals) < 2:
        raise ValueError("uniformity ratio needs at least two eps values")
    return max(vals) / min(vals)


@dataclass
class ConvergenceReport:
    records: list
    fitted_order: dict = field(default_factory=dict)      # (scheme, eps) -> order
    uniformity: dict = field(default_factory=dict)        # (scheme, h) -> ratio
    metadata: dict = field(default_factory=dict)

    def passes(self, order_range=(0.8, 1.2), max_ratio=20.0) -> bool:
        lo, hi = order_range
        return (all(r.ok for r in self.records)
                and bool(self.fitted_order)
                and all(lo <= p <= hi for p in self.fitted_order.values())
                and all(u <= max_ratio for u in self.uniformity.values()))


def build_report(records, metadata=None) -> ConvergenceReport:
    """Sort records and derive fitted orders and uniformity ratios."""
    records = sorted(records, key=lambda r: (r.scheme, r.eps, r.h))
    orders, uniform = {}, {}
    for scheme in sorted({r.scheme for r in records}):
        mine = [r for r in records if r.scheme == scheme and r.ok]
        for eps in sorted({r.eps for r in mine}):
            pts = [(r.h, r.err_total) for r in mine if r.eps == eps]
            if len(pts) >= 3 and all(e > 0 for _, e in pts):
                orders[(scheme, eps)] = slope_fit(pts)
        for h in sorted({r.h for r in mine}):
            errs = [r.err_total for r in mine if r.h == h]
            if len(errs) >= 2 and min(errs) > 0:
                uniform[(scheme, h)] = uniformity_ratio(errs)
    return ConvergenceReport(records, orders, uniform, dict(metadata or {}))

"""Experiment drivers behind the command line: trajectories, sweeps, energy runs, self-checks.

Everything numeric here is deterministic. Parallel sweeps hand out picklable
cell descriptions to a process pool and gather results into a table indexed
by cell coordinates, so output never depends on completion order.
"""
from __future__ import annotations

import io
import json
import logging
import math
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .diagnostics import (ConvergenceReport, DegenerateReference, ErrorRecord, build_report,
                          energy_error, rel_error)
from .fields import (INITIAL_STATES, PRESETS, ZeroFieldError, check_nonresonance, energy,
                     make_preset, phi1_apply, phi2_apply, rot_apply)
from .integrators import (SchemeId, SolverParams, State, StepFailure, analytic_constant,
                          integrate)
from .oracles import phi_matrices
from .reference import OracleFailure, RKConfig, integrate_reference

log = logging.getLogger(__name__)

DEFAULT_H_GRID = tuple(2.0 ** -k for k in range(6, 13))
DEFAULT_EPS_GRID = (1.0, 2.0 ** -4, 2.0 ** -8, 2.0 ** -12)
ORDER_RANGE = (0.8, 1.2)
MAX_UNIFORMITY = 20.0


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class RunSpec:
    preset: str = "problem1"
    eps: tuple = (1.0,)
    schemes: tuple = (SchemeId.S1AVF,)
    hs: tuple = (0.01,)
    t_end: float = 1.0
    x0: tuple | None = None
    v0: tuple | None = None
    omega0: tuple = (0.0, 0.0, 1.0)
    e0: tuple = (0.1, 0.05, 0.0)
    solver: SolverParams = SolverParams()
    rk: RKConfig = RKConfig()
    sample_every: int = 1
    workers: int = 1
    nonres_c: float = 0.05
    check_samples: int = 1000

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if not self.hs or any(not h > 0 for h in self.hs):
            raise ConfigError("step sizes must be positive")
        if any(a <= b for a, b in zip(self.hs, self.hs[1:])):
            raise ConfigError("h grid must be strictly decreasing")
        if not self.eps or any(not 0 < e <= 1 for e in self.eps):
            raise ConfigError("eps values must lie in (0, 1]")
        if self.sample_every < 1 or self.workers < 1:
            raise ConfigError("sample_every and workers must be at least 1")

    def initial_state(self) -> State:
        x0, v0 = INITIAL_STATES[self.preset]
        return State.from_values(self.x0 if self.x0 is not None else x0,
                                 self.v0 if self.v0 is not None else v0)

    def model(self, eps: float):
        return make_preset(self.preset, eps, self.omega0, self.e0)

    def params(self) -> dict:
        """Parameter echo. Worker count is left out: it must not affect output."""
        s0 = self.initial_state()
        return {
            "preset": self.preset,
            "eps": list(self.eps),
            "schemes": [SchemeId(s).value for s in self.schemes],
            "h": list(self.hs),
            "t_end": self.t_end,
            "x0": s0.x.tolist(),
            "v0": s0.v.tolist(),
            "omega0": list(self.omega0) if self.preset == "constant" else None,
            "e0": list(self.e0) if self.preset == "constant" else None,
            "fp_tol": self.solver.fp_tol,
            "fp_max_iters": self.solver.fp_max_iters,
            "quadrature_nodes": list(self.solver.nodes),
            "quadrature_weights": list(self.solver.weights),
            "rk": asdict(self.rk),
            "sample_every": self.sample_every,
            "v_parallel_direction": "total omega(x)",
        }


def n_steps_for(t_end: float, h: float) -> int:
    n = round(t_end / h)
    if n < 0 or abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError(f"t_end={t_end} is not an integer multiple of h={h}")
    return n


def fmt(x) -> str:
    """17 significant digits: round-trip exact for binary64."""
    return format(float(x), ".17g")


def _json_num(x):
    x = float(x)
    return x if math.isfinite(x) else None


# --- single trajectory -------------------------------------------------------

def run_trajectory(spec: RunSpec, scheme=None, h=None, eps=None):
    scheme = SchemeId(scheme or spec.schemes[0])
    h = spec.hs[0] if h is None else h
    eps = spec.eps[0] if eps is None else eps
    model = spec.model(eps)
    traj = integrate(scheme, model, spec.initial_state(), h, n_steps_for(spec.t_end, h),
                     spec.solver, spec.sample_every)
    return traj, energy_error(traj, model)


def trajectory_csv(traj, drift) -> str:
    buf = io.StringIO()
    cols = ["t", "x1", "x2", "x3", "v1", "v2", "v3", "H", "vpar1", "vpar2", "vpar3",
            "energy_err"]
    buf.write(",".join(cols) + "\n")
    for i in range(len(traj)):
        row = [traj.t[i], *traj.x[i], *traj.v[i], traj.H[i], *traj.vpar[i], drift[i]]
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


# --- reference cache ---------------------------------------------------------

class ReferenceCache:
    """Process-local cache of reference end states with atomic insert-or-read."""

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(preset, eps, x0, v0, t_end, rk: RKConfig, extra=()):
        return (preset, float(eps), tuple(map(float, x0)), tuple(map(float, v0)),
                float(t_end), tuple(asdict(rk).items()), tuple(extra))

    def get_or_compute(self, key, compute):
        with self._lock:
            if key in self._data:
                return self._data[key]
        value = compute()
        with self._lock:
            return self._data.setdefault(key, value)

    def __len__(self):
        return len(self._data)


REFERENCE_CACHE = ReferenceCache()


def _reference_task(args):
    preset, eps, omega0, e0, x0, v0, t_end, rk = args
    model = make_preset(preset, eps, omega0, e0)
    key = ReferenceCache.key(preset, eps, x0, v0, t_end, rk,
                             (tuple(omega0), tuple(e0)) if preset == "constant" else ())
    try:
        ref = REFERENCE_CACHE.get_or_compute(
            key, lambda: integrate_reference(model, State.from_values(x0, v0), t_end, rk))
    except OracleFailure as exc:
        return None, str(exc)
    return (ref.x.tolist(), ref.v.tolist()), ""


def _sweep_cell(args):
    (preset, eps, omega0, e0, x0, v0, t_end, solver, scheme, h, ref) = args
    scheme = SchemeId(scheme)
    if ref is None:
        return ErrorRecord.failed(scheme.value, eps, h, "reference solve failed", "oracle_failed")
    model = make_preset(preset, eps, omega0, e0)
    s0 = State.from_values(x0, v0)
    n = n_steps_for(t_end, h)
    try:
        traj = integrate(scheme, model, s0, h, n, solver, sample_every=max(n, 1))
        reference = State.from_values(ref[0], ref[1], t_end)
        err_x, err_v = rel_error(traj.final, reference, model)
    except StepFailure as exc:
        return ErrorRecord.failed(scheme.value, eps, h, f"step {exc.step}: {exc}")
    except (DegenerateReference, ZeroFieldError) as exc:
        return ErrorRecord.failed(scheme.value, eps, h, str(exc), "degenerate")
    H0 = energy(model, s0)
    e_err = abs(energy(model, traj.final) - H0) / abs(H0) if H0 != 0 else math.nan
    return ErrorRecord(scheme.value, eps, h, err_x, err_v, err_x + err_v, e_err,
                       traj.max_iterations)


def _pool_map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def run_sweep(spec: RunSpec) -> ConvergenceReport:
    """One error record per (scheme, eps, h); references computed once per eps."""
    if len(spec.hs) < 3:
        raise ConfigError("a sweep needs at least 3 step sizes")
    s0 = spec.initial_state()
    x0, v0 = s0.x.tolist(), s0.v.tolist()
    om, e0 = tuple(spec.omega0), tuple(spec.e0)
    ref_tasks = [(spec.preset, eps, om, e0, x0, v0, spec.t_end, spec.rk) for eps in spec.eps]
    refs = _pool_map(_reference_task, ref_tasks, spec.workers)
    for eps, (ref, msg) in zip(spec.eps, refs):
        if ref is None:
            log.error("reference failed for eps=%s: %s", eps, msg)
    cells = [(spec.preset, eps, om, e0, x0, v0, spec.t_end, spec.solver, SchemeId(sc).value, h,
              refs[i][0])
             for sc in spec.schemes for i, eps in enumerate(spec.eps) for h in spec.hs]
    records = _pool_map(_sweep_cell, cells, spec.workers)
    return build_report(records, {"params": spec.params()})


def report_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    cols = ["scheme", "eps", "h", "err_x", "err_vpar", "err_total", "energy_err",
            "fp_iters_max", "status"]
    buf.write(",".join(cols) + "\n")
    for r in report.records:
        buf.write(",".join([r.scheme, fmt(r.eps), fmt(r.h), fmt(r.err_x), fmt(r.err_vpar),
                            fmt(r.err_total), fmt(r.energy_err), str(r.fp_iters_max),
                            r.status]) + "\n")
    return buf.getvalue()


def orders_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    buf.write("kind,scheme,key,value\n")
    for (sc, eps), p in sorted(report.fitted_order.items()):
        buf.write(f"fitted_order,{sc},{fmt(eps)},{fmt(p)}\n")
    for (sc, h), u in sorted(report.uniformity.items()):
        buf.write(f"uniformity_ratio,{sc},{fmt(h)},{fmt(u)}\n")
    return buf.getvalue()


def report_json(report: ConvergenceReport) -> str:
    lo, hi = ORDER_RANGE
    orders, uniform = {}, {}
    for (sc, eps), p in sorted(report.fitted_order.items()):
        orders.setdefault(sc, {})[fmt(eps)] = p
    for (sc, h), u in sorted(report.uniformity.items()):
        uniform.setdefault(sc, {})[fmt(h)] = u
    records = [{k: (_json_num(v) if isinstance(v, float) else v)
                for k, v in r.as_dict().items()} for r in report.records]
    doc = {
        "params": report.metadata.get("params", {}),
        "records": records,
        "fitted_orders": orders,
        "uniformity": uniform,
        "checks": {
            "all_cells_ok": all(r.ok for r in report.records),
            "orders_in_range": all(lo <= p <= hi for p in report.fitted_order.values()),
            "uniformity_ok": all(u <= MAX_UNIFORMITY for u in report.uniformity.values()),
            "order_range": list(ORDER_RANGE),
            "max_uniformity_ratio": MAX_UNIFORMITY,
        },
        "pass": report.passes(ORDER_RANGE, MAX_UNIFORMITY),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# --- long-time energy --------------------------------------------------------

def run_energy(spec: RunSpec) -> dict:
    """Energy drift series per scheme at a single step size (and first eps)."""
    if len(spec.hs) != 1:
        raise ConfigError("the energy study takes a single step size")
    out = {}
    for sc in spec.schemes:
        traj, drift = run_trajectory(spec, sc)
        out[SchemeId(sc).value] = (traj, drift)
    return out


def energy_csv(traj, drift) -> str:
    buf = io.StringIO()
    buf.write("t,H,energy_err\n")
    for t, H, d in zip(traj.t, traj.H, drift):
        buf.write(f"{fmt(t)},{fmt(H)},{fmt(d)}\n")
    return buf.getvalue()


def energy_summary(spec: RunSpec, results: dict) -> dict:
    max_drift = {k: float(np.max(d)) for k, (_, d) in results.items()}
    checks = {}
    if "S1AVF" in max_drift:
        checks["avf_machine_accuracy"] = max_drift["S1AVF"] <= 1e-10
    if {"S1AVF", "S1SV", "S1VP"} <= max_drift.keys():
        a, s, v = max_drift["S1AVF"], max_drift["S1SV"], max_drift["S1VP"]
        checks["drift_ordering"] = 10 * a < s and 10 * s < v
    if spec.preset == "constant" and "S1SV" in max_drift:
        checks["sv_constant_field"] = max_drift["S1SV"] <= 1e-12
    return {"params": spec.params(), "max_energy_err": max_drift, "checks": checks,
            "pass": all(checks.values())}


# --- self check --------------------------------------------------------------

def _kernel_inputs(rng, n):
    """Random (omega, t, w); half straddle the small-angle switch."""
    from .fields import SMALL_ANGLE
    for i in range(n):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        if i % 2:
            theta = rng.uniform(0.0, 50.0)
        else:
            theta = SMALL_ANGLE * (1.0 + rng.uniform(-0.5, 0.5))
        t = rng.uniform(0.1, 2.0)
        yield d * theta / t, t, rng.normal(size=3)


def kernel_oracle_error(n: int = 1000, seed: int = 0) -> dict:
    """Worst max-norm deviation of each kernel from the series oracle."""
    rng = np.random.default_rng(seed)
    worst = {"rot": 0.0, "phi1": 0.0, "phi2": 0.0}
    for om, t, w in _kernel_inputs(rng, n):
        E, P1, P2 = phi_matrices(om, t)
        worst["rot"] = max(worst["rot"], float(np.max(np.abs(rot_apply(om, t, w) - E @ w))))
        worst["phi1"] = max(worst["phi1"], float(np.max(np.abs(phi1_apply(om, t, w) - P1 @ w))))
        worst["phi2"] = max(worst["phi2"], float(np.max(np.abs(phi2_apply(om, t, w) - P2 @ w))))
    return worst


def analytic_vs_reference(n: int = 100, seed: int = 1, t: float = 1.0,
                          rk: RKConfig = RKConfig()) -> float:
    """Worst max-norm gap between the closed form and the adaptive solver."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        om, e0 = rng.normal(size=3) * 3.0, rng.normal(size=3)
        s0 = State.from_values(rng.normal(size=3), rng.normal(size=3))
        model = make_preset("constant", 1.0, om, e0)
        a = analytic_constant(om, e0, s0, t)
        r = integrate_reference(model, s0, s0.t + t, rk)
        worst = max(worst, float(np.max(np.abs(np.concatenate([a.x - r.x, a.v - r.v])))))
    return worst


def run_check(spec: RunSpec, tol: float = 1e-12, xval_tol: float = 1e-9,
              xval_samples: int = 20) -> dict:
    kern = kernel_oracle_error(spec.check_samples)
    xval = analytic_vs_reference(xval_samples, rk=spec.rk)
    x0 = spec.initial_state().x
    nonres = []
    for eps in spec.eps:
        model = spec.model(eps)
        for h in spec.hs:
            rep = check_nonresonance(model, x0, h, spec.nonres_c)
            nonres.append({"eps": eps, "h": h, "argument": rep.argument,
                           "sinc": list(rep.sinc_values), "pass": rep.passed})
    checks = {
        "kernel_oracle": max(kern.values()) <= tol,
        "analytic_vs_reference": xval <= xval_tol,
        "nonresonance": all(r["pass"] for r in nonres),
    }
    return {"params": spec.params(), "kernel_max_error": kern, "kernel_tol": tol,
            "analytic_vs_reference_max_error": xval, "analytic_vs_reference_tol": xval_tol,
            "nonresonance_c": spec.nonres_c, "nonresonance": nonres, "checks": checks}

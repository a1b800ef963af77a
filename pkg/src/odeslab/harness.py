"""Experiment engine: run sampler plans against oracles and report errors.

An ExperimentPlan pins a model, a grid family and a list of samplers; the
executor runs every (sampler, M, seed) cell, measures final-state Euclidean
error against the exact flow, fits convergence orders on seed-averaged
errors, and emits deterministic CSV/JSON reports.  Specialized experiments
return the series behind the cancellation, tracking and lower-bound
acceptance criteria.

References are grid-independent: the exact flow from x0 over [t_start,
t_end] is shared by every M of a plan (isotropic Gaussians in closed form,
anything else by the step-doubled RK integrator, cached per model/x0).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import threading

import numpy as np

from .models import IsotropicGaussianModel
from .oracle import gaussian_kappa_star, reference_final_states
from .schedule import NoiseSchedule, build_grid
from .solvers import SamplerSpec, run_sampler

__all__ = [
    "ExperimentPlan",
    "ConvergenceReport",
    "final_error",
    "estimate_order",
    "run_plan",
    "cancellation_experiment",
    "tracking_experiment",
    "lower_bound_experiment",
    "emit_report",
    "format_float",
]

ERROR_FLOOR = 1e-12  # points at or below are excluded from slope fits
REFERENCE_TOL = 1e-10

CSV_COLUMNS = ("experiment", "sampler", "lookahead", "M", "NFE", "seed", "final_error", "slope_group")


def format_float(x) -> str:
    """17-significant-digit decimal form; canonical for CSV/JSON output."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class ExperimentPlan:
    """One model, one grid family, a sampler list and the M/seed sweep."""

    name: str
    schedule: NoiseSchedule
    model: object
    grid_kind: str
    t_start: float
    t_end: float
    M_list: tuple
    samplers: tuple
    seeds: tuple = (0, 1, 2)
    use_gaussian_bypass: bool = True
    reference_tol: float = REFERENCE_TOL

    def __post_init__(self) -> None:
        ms = tuple(int(m) for m in self.M_list)
        if len(ms) < 4:
            raise ValueError("slope fitting needs at least 4 step counts")
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("M_list must be strictly increasing")
        object.__setattr__(self, "M_list", ms)
        object.__setattr__(self, "samplers", tuple(self.samplers))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


@dataclass
class ConvergenceReport:
    """Rows, fitted slopes and auxiliary series of one executed plan."""

    experiment: str
    rows: list  # dicts with CSV_COLUMNS keys
    slopes: dict  # slope_group -> {"slope","residual","points"}
    series: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config_echo,
            "oracle": self.oracle,
            "rows": self.rows,
            "slopes": self.slopes,
            "series": self.series,
        }


def final_error(traj, ref) -> float:
    """‖x_{t_M} − x*_{t_M}‖₂ between a trajectory and its reference."""
    if traj.grid is not ref.grid and not (
        traj.grid.M == ref.grid.M and np.array_equal(traj.grid.times, ref.grid.times)
    ):
        raise ValueError("trajectory and reference grids do not match")
    a, b = traj.states[-1], ref.states[-1]
    if a.shape != b.shape:
        raise ValueError("dimension mismatch between trajectory and reference")
    return float(np.linalg.norm(a - b))


def estimate_order(errors) -> tuple:
    """Least-squares slope of log(error) vs log(1/M), with max |deviation|.

    Points with error ≤ 1e−12 are excluded (double precision floors
    higher-order errors quickly); at least 4 usable points are required.
    """
    pts = [(int(m), float(e)) for m, e in errors if float(e) > ERROR_FLOOR]
    if len(pts) < 4:
        raise ValueError(f"need at least 4 points above the error floor, have {len(pts)}")
    x = np.array([math.log(1.0 / m) for m, _ in pts])
    y = np.array([math.log(e) for _, e in pts])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(y - (slope * x + intercept))))
    return float(slope), residual


# --- references ----------------------------------------------------------------

_REF_CACHE: dict = {}
_REF_LOCK = threading.Lock()


def _model_key(model) -> str:
    import json

    return json.dumps(model.to_dict(), sort_keys=True)


def _draw_x0(model, t_start: float, seed: int) -> np.ndarray:
    # counter-based generator: same x0 for a seed regardless of draw order
    rng = np.random.Generator(np.random.Philox(key=seed))
    return model.marginal_sample(t_start, rng)


def _reference_finals(plan: ExperimentPlan, x0s: np.ndarray) -> tuple:
    """Exact-flow final states for each seed's x0; closed form when possible."""
    model, t0, t1 = plan.model, plan.t_start, plan.t_end
    if getattr(model, "kind", None) == "gaussian" and plan.use_gaussian_bypass:
        sched = model.schedule
        lam0 = sched.lambda_of_t(t0)
        lam1 = sched.lambda_of_t(t1) if sched.sigma(t1) > 0 else math.inf
        k = gaussian_kappa_star(model.gamma, lam0, lam1, sched.alpha(t0), sched.alpha(t1))
        return k * x0s, 0.0
    key = (_model_key(model), float(t0), float(t1), float(plan.reference_tol), x0s.tobytes())
    with _REF_LOCK:
        hit = _REF_CACHE.get(key)
    if hit is not None:
        return hit
    finals, achieved = reference_final_states(
        model, t0, t1, x0s, tol=plan.reference_tol, use_gaussian_bypass=plan.use_gaussian_bypass
    )
    with _REF_LOCK:
        _REF_CACHE[key] = (finals, achieved)
    return finals, achieved


# --- plan execution ------------------------------------------------------------


def _run_cell(plan: ExperimentPlan, spec: SamplerSpec, M: int, seed: int, x0, ref_final):
    grid = build_grid(plan.schedule, plan.grid_kind, M, plan.t_start, plan.t_end)
    traj = run_sampler(spec, grid, plan.model, x0)
    err = float(np.linalg.norm(traj.final_state - ref_final))
    return {
        "experiment": plan.name,
        "sampler": spec.label(),
        "lookahead": spec.lookahead if spec.rule == "forward-value" else "",
        "M": M,
        "NFE": traj.model_calls,
        "seed": seed,
        "final_error": err,
        "slope_group": f"{plan.name}/{spec.label()}",
    }


def run_plan(plan: ExperimentPlan, threads: int = 1) -> ConvergenceReport:
    """Execute every (sampler, M, seed) cell and fit per-sampler slopes.

    Cells are independent pure computations; the row list is sorted, so the
    report is identical for any thread count.
    """
    x0s = np.array([_draw_x0(plan.model, plan.t_start, s) for s in plan.seeds])
    refs, achieved = _reference_finals(plan, x0s)
    cells = [
        (spec, M, seed, x0s[k], refs[k])
        for spec in plan.samplers
        for M in plan.M_list
        for k, seed in enumerate(plan.seeds)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: _run_cell(plan, *c), cells))
    else:
        rows = [_run_cell(plan, *c) for c in cells]
    rows.sort(key=lambda r: (r["slope_group"], r["lookahead"], r["M"], r["seed"]))

    slopes = {}
    for spec in plan.samplers:
        group = f"{plan.name}/{spec.label()}"
        by_m = {}
        for r in rows:
            if r["slope_group"] == group:
                by_m.setdefault(r["M"], []).append(r["final_error"])
        averaged = [(m, float(np.mean(v))) for m, v in sorted(by_m.items())]
        try:
            slope, residual = estimate_order(averaged)
            slopes[group] = {"slope": slope, "residual": residual, "points": len(averaged)}
        except ValueError as exc:  # all points floored: record, don't fail the report
            slopes[group] = {"slope": None, "residual": None, "points": 0, "note": str(exc)}

    return ConvergenceReport(
        experiment=plan.name,
        rows=rows,
        slopes=slopes,
        oracle={
            "gaussian_bypass": plan.use_gaussian_bypass,
            "reference_tol": plan.reference_tol,
            "achieved_tolerance": achieved,
        },
    )


def _seed_mean_errors(report: ConvergenceReport, group: str) -> list:
    by_m: dict = {}
    for r in report.rows:
        if r["slope_group"] == group:
            by_m.setdefault(r["M"], []).append(r["final_error"])
    return [(m, float(np.mean(v))) for m, v in sorted(by_m.items())]


def cancellation_experiment(plan: ExperimentPlan, threads: int = 1):
    """Signed-error cancellation series: (M, ‖e_bck+e_for‖, ‖e_bck‖, ‖e_for‖).

    The backward (first-order) and idealized forward runs share the exact
    same x0 per seed; the combined series should fit slope ≈ 2 while each
    individual series fits ≈ 1.
    """
    labels = [s.label() for s in plan.samplers]
    if "ddim" not in labels or "forward-ideal" not in labels:
        raise ValueError("cancellation plan must include ddim and forward-ideal")
    x0s = np.array([_draw_x0(plan.model, plan.t_start, s) for s in plan.seeds])
    refs, _ = _reference_finals(plan, x0s)

    def one(M):
        grid = build_grid(plan.schedule, plan.grid_kind, M, plan.t_start, plan.t_end)
        comb, eb, ef, dots = [], [], [], []
        for k in range(len(plan.seeds)):
            b = run_sampler(SamplerSpec(rule="ddim"), grid, plan.model, x0s[k]).final_state - refs[k]
            f = (
                run_sampler(SamplerSpec(rule="forward-ideal"), grid, plan.model, x0s[k]).final_state
                - refs[k]
            )
            comb.append(np.linalg.norm(b + f))
            eb.append(np.linalg.norm(b))
            ef.append(np.linalg.norm(f))
            dots.append(float(b @ f))
        return (
            M,
            float(np.mean(comb)),
            float(np.mean(eb)),
            float(np.mean(ef)),
            float(np.mean(dots)),
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            series = list(pool.map(one, plan.M_list))
    else:
        series = [one(M) for M in plan.M_list]
    return series


def tracking_experiment(plan: ExperimentPlan, lookahead: str, threads: int = 1):
    """Gap series (M, ‖x_{t_M} − x^for_{t_M}‖) between the practical sampler
    with the given lookahead and the idealized forward-value iterates, run
    with identical x0 and grids; its fitted slope must exceed 1."""
    x0s = np.array([_draw_x0(plan.model, plan.t_start, s) for s in plan.seeds])

    def one(M):
        grid = build_grid(plan.schedule, plan.grid_kind, M, plan.t_start, plan.t_end)
        gaps = []
        for k in range(len(plan.seeds)):
            a = run_sampler(
                SamplerSpec(rule="forward-value", lookahead=lookahead), grid, plan.model, x0s[k]
            ).final_state
            b = run_sampler(SamplerSpec(rule="forward-ideal"), grid, plan.model, x0s[k]).final_state
            gaps.append(np.linalg.norm(a - b))
        return (M, float(np.mean(gaps)))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, plan.M_list))
    return [one(M) for M in plan.M_list]


def lower_bound_experiment(
    schedule: NoiseSchedule,
    grid_kind: str,
    M_list,
    t_start: float,
    t_end: float,
    seeds=(0, 1, 2),
    dim: int = 4,
    threads: int = 1,
):
    """Plateau series (M, M·err_ddim, M²·err_solver2) on the order-specific
    witness γ = e^{−λ(t_M)}; both normalized series must stay bounded away
    from zero.  The UniPC-3 series M²·err is returned as a consistency
    column (it must decay, third order beats the second-order bound)."""
    gamma = math.exp(-schedule.lambda_of_t(t_end))
    model = IsotropicGaussianModel(schedule, gamma=gamma, dim=dim)
    plan = ExperimentPlan(
        name="lower-bound",
        schedule=schedule,
        model=model,
        grid_kind=grid_kind,
        t_start=t_start,
        t_end=t_end,
        M_list=tuple(M_list),
        samplers=(
            SamplerSpec(rule="ddim"),
            SamplerSpec(rule="odesolver-p", p=2),
            SamplerSpec(rule="unipc"),
        ),
        seeds=tuple(seeds),
    )
    report = run_plan(plan, threads=threads)
    e1 = dict(_seed_mean_errors(report, "lower-bound/ddim"))
    e2 = dict(_seed_mean_errors(report, "lower-bound/odesolver-2"))
    e3 = dict(_seed_mean_errors(report, "lower-bound/unipc-3"))
    series = [(M, M * e1[M], M * M * e2[M], M * M * e3[M]) for M in plan.M_list]
    return series, report, gamma


# --- serialization -------------------------------------------------------------


def _json_value(v) -> str:
    if isinstance(v, dict):
        items = ",".join(f"{_json_value(str(k))}:{_json_value(w)}" for k, w in v.items())
        return "{" + items + "}"
    if isinstance(v, (list, tuple)) or isinstance(v, np.ndarray):
        return "[" + ",".join(_json_value(w) for w in v) + "]"
    if isinstance(v, str):
        import json

        return json.dumps(v)
    if isinstance(v, bool) or v is None:
        return {True: "true", False: "false", None: "null"}[v]
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    raise TypeError(f"unserializable value of type {type(v)!r}")


def report_json_bytes(report: ConvergenceReport) -> bytes:
    return (_json_value(report.to_dict()) + "\n").encode()


def report_csv_bytes(report: ConvergenceReport) -> bytes:
    lines = [",".join(CSV_COLUMNS)]
    for r in report.rows:
        lines.append(
            ",".join(
                (
                    r["experiment"],
                    r["sampler"],
                    r["lookahead"],
                    str(r["M"]),
                    str(r["NFE"]),
                    str(r["seed"]),
                    format_float(r["final_error"]),
                    r["slope_group"],
                )
            )
        )
    return ("\n".join(lines) + "\n").encode()


def emit_report(report: ConvergenceReport, out_dir) -> tuple:
    """Write <experiment>.csv and <experiment>.json; returns the two paths.

    Byte output is a pure function of the report contents.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    base = report.experiment.replace("/", "-")
    csv_path = os.path.join(out_dir, f"{base}.csv")
    json_path = os.path.join(out_dir, f"{base}.json")
    with open(csv_path, "wb") as fh:
        fh.write(report_csv_bytes(report))
    with open(json_path, "wb") as fh:
        fh.write(report_json_bytes(report))
    return csv_path, json_path

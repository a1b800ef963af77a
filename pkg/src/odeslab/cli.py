"""Command-line front end: run configured experiments, plot reports, verify.

Commands:
  run <config.json>        execute one experiment config, write CSV/JSON
  plot <report.csv> <svg>  log-log error plot with fitted-slope annotations
  verify [--only <name>]   run the built-in acceptance suite

Exit codes: 0 ok, 2 usage/config error, 3 numerical failure.  The output
directory resolves as --out > $ODESLAB_OUT > config "out_dir" > "out".
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

from .acceptance import run_criteria
from .harness import (
    CSV_COLUMNS,
    ExperimentPlan,
    cancellation_experiment,
    emit_report,
    estimate_order,
    lower_bound_experiment,
    run_plan,
    tracking_experiment,
)
from .models import model_from_dict
from .oracle import NumericalError
from .schedule import NoiseSchedule
from .solvers import SamplerSpec

__all__ = ["main", "cmd_run", "cmd_plot", "cmd_verify", "ConfigError", "load_config"]

EXPERIMENTS = ("orders", "cancellation", "tracking", "lower-bound")


class ConfigError(ValueError):
    """Anything wrong with a run configuration (exit code 2)."""


def _reject_unknown(d: dict, allowed, where: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _sampler_from_dict(d: dict, tolerances: dict) -> SamplerSpec:
    _reject_unknown(
        d,
        {"rule", "p", "predictor_order", "lookahead", "eval_at_corrected"},
        "sampler",
    )
    if "rule" not in d:
        raise ConfigError("sampler entry needs a 'rule'")
    kwargs = dict(d)
    kwargs.update(tolerances)
    try:
        return SamplerSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sampler {d!r}: {exc}") from exc


def load_config(path: str) -> dict:
    """Parse and validate a config file into a normalized dict."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(
        raw,
        {
            "experiment",
            "name",
            "schedule",
            "grid",
            "model",
            "samplers",
            "M_list",
            "seeds",
            "out_dir",
            "comparison",
            "oracle",
            "tolerances",
            "lookaheads",
        },
        "config",
    )
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")

    cfg: dict = {"experiment": exp, "name": raw.get("name", exp)}

    try:
        cfg["schedule"] = NoiseSchedule.from_dict(raw.get("schedule", {"kind": "ve"}))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    grid = dict(raw.get("grid", {}))
    _reject_unknown(grid, {"family", "t_start", "t_end", "M_ref", "reference_spacing"}, "grid")
    cfg["grid_kind"] = grid.get("family", "uniform-lambda")
    cfg["t_start"] = float(grid.get("t_start", 10.0))
    cfg["t_end"] = float(grid.get("t_end", 1e-3))
    cfg["m_ref"] = grid.get("M_ref")
    cfg["reference_spacing"] = grid.get("reference_spacing", "uniform-time")

    ms = raw.get("M_list")
    if not isinstance(ms, list) or len(ms) < 4:
        raise ConfigError("M_list must be a list of at least 4 step counts")
    cfg["M_list"] = tuple(int(m) for m in ms)
    cfg["seeds"] = tuple(int(s) for s in raw.get("seeds", [0, 1, 2]))

    comparison = raw.get("comparison", "equal-M")
    if comparison not in ("equal-M", "equal-NFE"):
        raise ConfigError(f"comparison must be equal-M or equal-NFE, got {comparison!r}")
    cfg["comparison"] = comparison

    oracle = dict(raw.get("oracle", {}))
    _reject_unknown(oracle, {"gaussian_bypass", "reference_tol"}, "oracle")
    cfg["gaussian_bypass"] = bool(oracle.get("gaussian_bypass", True))
    cfg["reference_tol"] = float(oracle.get("reference_tol", 1e-10))

    tol = dict(raw.get("tolerances", {}))
    _reject_unknown(tol, {"picard_tol", "picard_max_iters"}, "tolerances")
    cfg["tolerances"] = tol

    if exp == "lower-bound":
        for key in ("model", "samplers", "lookaheads"):
            if key in raw:
                raise ConfigError(f"lower-bound experiment derives its own {key}; remove it")
        cfg["model"] = None
        cfg["samplers"] = ()
    else:
        if "model" not in raw:
            raise ConfigError(f"{exp} experiment needs a model")
        try:
            cfg["model"] = model_from_dict(raw["model"], cfg["schedule"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad model: {exc}") from exc
        if exp == "orders":
            entries = raw.get("samplers")
            if not entries:
                raise ConfigError("orders experiment needs a non-empty samplers list")
            cfg["samplers"] = tuple(_sampler_from_dict(e, tol) for e in entries)
        elif exp == "cancellation":
            if "samplers" in raw:
                labels = [e.get("rule") for e in raw["samplers"]]
                if "ddim" not in labels or "forward-ideal" not in labels:
                    raise ConfigError("cancellation samplers must include ddim and forward-ideal")
                cfg["samplers"] = tuple(_sampler_from_dict(e, tol) for e in raw["samplers"])
            else:
                cfg["samplers"] = (
                    SamplerSpec(rule="ddim", **tol),
                    SamplerSpec(rule="forward-ideal", **tol),
                )
        elif exp == "tracking":
            las = raw.get("lookaheads", ["ddim"])
            if not isinstance(las, list) or not las:
                raise ConfigError("lookaheads must be a non-empty list")
            cfg["lookaheads"] = tuple(las)
            cfg["samplers"] = tuple(
                SamplerSpec(rule="forward-value", lookahead=la, **tol) for la in las
            ) + (SamplerSpec(rule="forward-ideal", **tol),)
    cfg["out_dir"] = raw.get("out_dir")
    return cfg


def _build_plan(cfg: dict, name: str, samplers, M_list) -> ExperimentPlan:
    return ExperimentPlan(
        name=name,
        schedule=cfg["schedule"],
        model=cfg["model"],
        grid_kind=cfg["grid_kind"],
        t_start=cfg["t_start"],
        t_end=cfg["t_end"],
        M_list=M_list,
        samplers=samplers,
        seeds=cfg["seeds"],
        use_gaussian_bypass=cfg["gaussian_bypass"],
        reference_tol=cfg["reference_tol"],
    )


def _equal_nfe_m_list(M_list) -> tuple:
    mapped = tuple(m // 2 for m in M_list)
    if any(b <= a for a, b in zip(mapped, mapped[1:])) or mapped[0] < 1:
        raise ConfigError(f"equal-NFE mapping of M_list {list(M_list)} is not strictly increasing")
    return mapped


def execute_config(cfg: dict, threads: int = 1):
    """Run the configured experiment; returns the finished ConvergenceReport."""
    exp = cfg["experiment"]
    if exp == "lower-bound":
        series, report, gamma = lower_bound_experiment(
            cfg["schedule"],
            cfg["grid_kind"],
            cfg["M_list"],
            cfg["t_start"],
            cfg["t_end"],
            seeds=cfg["seeds"],
            threads=threads,
        )
        report.experiment = cfg["name"]
        for row in report.rows:
            row["experiment"] = cfg["name"]
            row["slope_group"] = cfg["name"] + "/" + row["slope_group"].split("/", 1)[1]
        report.slopes = {cfg["name"] + "/" + k.split("/", 1)[1]: v for k, v in report.slopes.items()}
        report.series["lower_bound"] = [list(r) for r in series]
        report.config_echo = _echo(cfg) | {"witness_gamma": gamma}
        return report

    if exp == "cancellation":
        plan = _build_plan(cfg, cfg["name"], cfg["samplers"], cfg["M_list"])
        series = cancellation_experiment(plan, threads=threads)
        report = run_plan(plan, threads=threads)
        report.series["cancellation"] = [list(r) for r in series]
        report.config_echo = _echo(cfg)
        return report

    if exp == "tracking":
        plan = _build_plan(cfg, cfg["name"], cfg["samplers"], cfg["M_list"])
        report = run_plan(plan, threads=threads)
        tracking = {}
        for la in cfg["lookaheads"]:
            tracking[la] = [list(r) for r in tracking_experiment(plan, la, threads=threads)]
        report.series["tracking"] = tracking
        report.config_echo = _echo(cfg)
        return report

    # orders
    if cfg["comparison"] == "equal-NFE":
        # two predictor calls per step for non-oracle forward-value lookaheads,
        # so those samplers run at M//2 for an equal evaluation budget
        halved = tuple(
            s for s in cfg["samplers"] if s.rule == "forward-value" and s.lookahead != "oracle"
        )
        full = tuple(s for s in cfg["samplers"] if s not in halved)
        reports = []
        if full:
            reports.append(run_plan(_build_plan(cfg, cfg["name"], full, cfg["M_list"]), threads))
        if halved:
            reports.append(
                run_plan(
                    _build_plan(cfg, cfg["name"], halved, _equal_nfe_m_list(cfg["M_list"])),
                    threads,
                )
            )
        report = reports[0]
        for extra in reports[1:]:
            report.rows.extend(extra.rows)
            report.slopes.update(extra.slopes)
            report.oracle = report.oracle or extra.oracle
        report.rows.sort(key=lambda r: (r["slope_group"], r["lookahead"], r["M"], r["seed"]))
    else:
        report = run_plan(_build_plan(cfg, cfg["name"], cfg["samplers"], cfg["M_list"]), threads)
    report.config_echo = _echo(cfg)
    return report


def _echo(cfg: dict) -> dict:
    model = cfg["model"]
    echo = {
        "experiment": cfg["experiment"],
        "name": cfg["name"],
        "schedule": cfg["schedule"].to_dict(),
        "grid": {"family": cfg["grid_kind"], "t_start": cfg["t_start"], "t_end": cfg["t_end"]},
        "model": model.to_dict() if model is not None else None,
        "samplers": [s.label() for s in cfg["samplers"]],
        "M_list": list(cfg["M_list"]),
        "seeds": list(cfg["seeds"]),
        "comparison": cfg["comparison"],
        "oracle": {"gaussian_bypass": cfg["gaussian_bypass"], "reference_tol": cfg["reference_tol"]},
    }
    if "lookaheads" in cfg:
        echo["lookaheads"] = list(cfg["lookaheads"])
    return echo


def _resolve_out(cfg_out, cli_out) -> str:
    return cli_out or os.environ.get("ODESLAB_OUT") or cfg_out or "out"


def cmd_run(config_path: str, out: str | None = None, threads: int = 1) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
        report = execute_config(cfg, threads=threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = _resolve_out(cfg.get("out_dir"), out)
    try:
        csv_path, json_path = emit_report(report, out_dir)
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return 2
    for group in sorted(report.slopes):
        s = report.slopes[group]
        if s["slope"] is None:
            print(f"{group}: slope n/a ({s.get('note', 'no usable points')})")
        else:
            print(f"{group}: slope {s['slope']:.3f} residual {s['residual']:.3f}")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    # runtime is console-only; report bytes stay deterministic
    print(f"runtime {time.perf_counter() - t0:.2f}s")
    return 0


# --- plotting -------------------------------------------------------------------

_PALETTE = ("#1965b0", "#dc050c", "#4eb265", "#f7a022", "#882e72", "#777777")


def _read_rows(csv_path: str):
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ConfigError(f"CSV is missing columns: {missing}")
        return list(reader)


def _svg_text(x, y, s, size=12, anchor="start", color="#333333") -> str:
    return (
        f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" text-anchor="{anchor}" '
        f'fill="{color}" font-family="Helvetica,Arial,sans-serif">{s}</text>'
    )


def render_plot(rows) -> str:
    """Log-log SVG of seed-averaged final error vs M, one polyline per sampler."""
    width, height = 720.0, 540.0
    left, right, top, bottom = 70.0, 170.0, 30.0, 50.0
    groups: dict = {}
    for r in rows:
        err = float(r["final_error"])
        if err <= 0.0:
            continue
        key = r["sampler"]
        groups.setdefault(key, {}).setdefault(int(r["M"]), []).append(err)
    series = {}
    for key, by_m in sorted(groups.items()):
        pts = [(m, sum(v) / len(v)) for m, v in sorted(by_m.items())]
        if pts:
            series[key] = pts

    body = [
        f'<rect width="{width:.0f}" height="{height:.0f}" fill="#ffffff"/>',
        _svg_text(left, 20, "final error vs M (log-log)", size=14),
    ]
    if not series:
        body.append(_svg_text(width / 2, height / 2, "no data", size=18, anchor="middle"))
    else:
        xs = [math.log10(m) for pts in series.values() for m, _ in pts]
        ys = [math.log10(e) for pts in series.values() for _, e in pts]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        x0, x1 = (x0 - 0.05, x1 + 0.05) if x1 > x0 else (x0 - 0.5, x1 + 0.5)
        y0, y1 = (y0 - 0.05 * (y1 - y0 + 0.1), y1 + 0.05 * (y1 - y0 + 0.1))
        px = lambda v: left + (v - x0) / (x1 - x0) * (width - left - right)
        py = lambda v: height - bottom - (v - y0) / (y1 - y0) * (height - top - bottom)
        body.append(
            f'<rect x="{left:.2f}" y="{top:.2f}" width="{width - left - right:.2f}" '
            f'height="{height - top - bottom:.2f}" fill="none" stroke="#999999"/>'
        )
        for k in range(math.ceil(x0), math.floor(x1) + 1):
            body.append(
                f'<line x1="{px(k):.2f}" y1="{py(y0):.2f}" x2="{px(k):.2f}" y2="{py(y1):.2f}" '
                f'stroke="#dddddd"/>'
            )
            body.append(_svg_text(px(k), height - bottom + 18, f"10^{k}", anchor="middle"))
        for k in range(math.ceil(y0), math.floor(y1) + 1):
            body.append(
                f'<line x1="{px(x0):.2f}" y1="{py(k):.2f}" x2="{px(x1):.2f}" y2="{py(k):.2f}" '
                f'stroke="#dddddd"/>'
            )
            body.append(_svg_text(left - 8, py(k) + 4, f"10^{k}", anchor="end"))
        body.append(_svg_text((left + width - right) / 2, height - 12, "M (steps)", anchor="middle"))
        legend_y = top + 14
        for idx, (key, pts) in enumerate(series.items()):
            color = _PALETTE[idx % len(_PALETTE)]
            path = " ".join(
                f"{px(math.log10(m)):.2f},{py(math.log10(e)):.2f}" for m, e in pts
            )
            body.append(
                f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.8"/>'
            )
            for m, e in pts:
                body.append(
                    f'<circle cx="{px(math.log10(m)):.2f}" cy="{py(math.log10(e)):.2f}" '
                    f'r="2.6" fill="{color}"/>'
                )
            try:
                slope, _ = estimate_order(pts)
                label = f"{key} (slope {slope:.2f})"
            except ValueError:
                label = f"{key} (slope n/a)"
            body.append(
                f'<rect x="{width - right + 10:.2f}" y="{legend_y - 9:.2f}" width="14" height="4" '
                f'fill="{color}"/>'
            )
            body.append(_svg_text(width - right + 30, legend_y - 3, label, size=11))
            legend_y += 18
    content = "\n".join(body)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">\n{content}\n</svg>\n'
    )


def cmd_plot(csv_path: str, out_svg: str) -> int:
    try:
        rows = _read_rows(csv_path)
    except OSError as exc:
        print(f"cannot read CSV: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"{exc}", file=sys.stderr)
        return 2
    svg = render_plot(rows)
    try:
        with open(out_svg, "wb") as fh:
            fh.write(svg.encode())
    except OSError as exc:
        print(f"cannot write SVG: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out_svg}")
    return 0


def cmd_verify(only: str | None = None, threads: int = 1) -> int:
    try:
        results = run_criteria(only=only, threads=threads)
    except KeyError as exc:
        print(f"{exc.args[0]}", file=sys.stderr)
        return 2
    all_ok = True
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        all_ok &= r.passed
        print(f"{mark} {r.name} ({r.runtime:.2f}s): {r.detail}")
    print("verify: all criteria passed" if all_ok else "verify: FAILURES above")
    return 0 if all_ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="odeslab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (overrides ODESLAB_OUT)")
    p_run.add_argument("--threads", type=int, default=1)

    p_plot = sub.add_parser("plot", help="render a report CSV to SVG")
    p_plot.add_argument("csv")
    p_plot.add_argument("svg")

    p_verify = sub.add_parser("verify", help="run the acceptance suite")
    p_verify.add_argument("--only", default=None)
    p_verify.add_argument("--threads", type=int, default=1)

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, out=args.out, threads=args.threads)
    if args.command == "plot":
        return cmd_plot(args.csv, args.svg)
    return cmd_verify(only=args.only, threads=args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Convergence order sweep on the bimodal mixture.

Runs the first-, second- and third-order update rules plus the idealized
forward-value iteration over a doubling ladder of step counts and fits the
slope of log(error) against log(1/M).  Expected: ddim near 1, the
second-order rule near 2, the predictor-corrector near 3.  The plain
third-order multistep rule sits between 2 and 3 on this window because its
warm-up ramps the order (the first step is first-order).
"""

from odeslab import ExperimentPlan, GaussianMixtureModel, SamplerSpec, run_plan, ve_schedule


def main():
    sch = ve_schedule()
    model = GaussianMixtureModel(
        sch,
        weights=[0.5, 0.5],
        means=[[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]],
        scales=[0.5, 0.5],
    )
    plan = ExperimentPlan(
        name="orders-demo",
        schedule=sch,
        model=model,
        grid_kind="uniform-lambda",
        t_start=10.0,
        t_end=1e-3,
        M_list=(10, 20, 40, 80, 160, 320),
        samplers=(
            SamplerSpec(rule="ddim"),
            SamplerSpec(rule="odesolver-p", p=2),
            SamplerSpec(rule="odesolver-p", p=3),
            SamplerSpec(rule="unipc"),
            SamplerSpec(rule="forward-ideal"),
        ),
        seeds=(0, 1, 2),
    )
    report = run_plan(plan)

    print(f"{'sampler':24s} {'slope':>7s} {'residual':>9s}")
    for group in sorted(report.slopes):
        s = report.slopes[group]
        print(f"{group.split('/')[1]:24s} {s['slope']:7.3f} {s['residual']:9.3f}")

    print("\nseed-averaged final errors:")
    ms = sorted({r['M'] for r in report.rows})
    print(f"{'sampler':24s}" + "".join(f" M={m:<9d}" for m in ms))
    by = {}
    for r in report.rows:
        by.setdefault(r["sampler"], {}).setdefault(r["M"], []).append(r["final_error"])
    for name in sorted(by):
        cells = [sum(v) / len(v) for _, v in sorted(by[name].items())]
        print(f"{name:24s}" + "".join(f" {c:10.3e} " for c in cells))


if __name__ == "__main__":
    main()

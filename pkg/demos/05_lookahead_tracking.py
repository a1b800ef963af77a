"""How closely practical forward-value samplers track the idealized one.

The idealized iteration evaluates the data prediction at the exact solution
of its implicit step; practical variants replace that with a cheap lookahead
estimate.  The gap between practical and idealized final states shrinks
faster than first order, so the practical sampler inherits the idealized
iteration's first-order accuracy budget.
"""

from odeslab import (
    ExperimentPlan,
    IsotropicGaussianModel,
    SamplerSpec,
    estimate_order,
    tracking_experiment,
    ve_schedule,
)


def main():
    sch = ve_schedule()
    plan = ExperimentPlan(
        name="tracking-demo",
        schedule=sch,
        model=IsotropicGaussianModel(sch, gamma=1.0, dim=4),
        grid_kind="uniform-lambda",
        t_start=10.0,
        t_end=1e-3,
        M_list=(40, 80, 160, 320, 640, 1280),
        samplers=(),
        seeds=(0, 1, 2),
    )

    print(f"{'M':>6s} {'gap(ddim)':>12s} {'gap(oracle)':>12s}")
    ddim = tracking_experiment(plan, "ddim")
    oracle = tracking_experiment(plan, "oracle")
    for (m, gd), (_, go) in zip(ddim, oracle):
        print(f"{m:6d} {gd:12.4e} {go:12.4e}")

    for name, series in (("ddim", ddim), ("oracle", oracle)):
        slope, _ = estimate_order(series)
        print(f"tracking gap slope with {name} lookahead: {slope:.3f}  (> 1)")


if __name__ == "__main__":
    main()

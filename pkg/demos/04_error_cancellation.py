"""First-order errors cancel between backward and forward iterations.

The ddim iteration and the idealized forward-value iteration are both
first-order, but their leading error terms carry opposite signs.  Averaging
their final states kills the leading term: the combined error decays at
second order while each individual error only decays at first order.
"""

from odeslab import (
    ExperimentPlan,
    IsotropicGaussianModel,
    SamplerSpec,
    cancellation_experiment,
    estimate_order,
    ve_schedule,
)


def main():
    sch = ve_schedule()
    plan = ExperimentPlan(
        name="cancellation-demo",
        schedule=sch,
        model=IsotropicGaussianModel(sch, gamma=1.0, dim=4),
        grid_kind="uniform-lambda",
        t_start=10.0,
        t_end=1e-3,
        M_list=(10, 20, 40, 80, 160, 320),
        samplers=(SamplerSpec(rule="ddim"), SamplerSpec(rule="forward-ideal")),
        seeds=(0, 1, 2),
    )
    series = cancellation_experiment(plan)

    print(f"{'M':>5s} {'combined':>11s} {'backward':>11s} {'forward':>11s} {'dot':>11s}")
    for m, comb, eb, ef, dot in series:
        print(f"{m:5d} {comb:11.3e} {eb:11.3e} {ef:11.3e} {dot:11.3e}")

    s_comb, _ = estimate_order([(m, c) for m, c, *_ in series])
    s_b, _ = estimate_order([(m, eb) for m, _, eb, _, _ in series])
    s_f, _ = estimate_order([(m, ef) for m, _, _, ef, _ in series])
    print(f"\nslopes: combined {s_comb:.3f}, backward {s_b:.3f}, forward {s_f:.3f}")
    print("negative dot products: the two signed errors oppose each other")


if __name__ == "__main__":
    main()

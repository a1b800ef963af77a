"""A target that saturates the first- and second-order error rates.

On a narrow Gaussian whose variance matches the terminal node, the scaled
errors M * err(ddim) and M^2 * err(second order) stay bounded away from
zero across the whole ladder: the convergence rates are sharp, not just
upper bounds.  The third-order predictor-corrector's scaled M^2 error decays,
confirming it genuinely beats second order on the same target.
"""

from odeslab import lower_bound_experiment, ve_schedule


def main():
    series, report, gamma = lower_bound_experiment(
        ve_schedule(), "uniform-lambda", (10, 20, 40, 80, 160, 320), 10.0, 1e-3
    )
    print(f"witness target scale gamma = {gamma:g}\n")
    print(f"{'M':>5s} {'M*err(ddim)':>14s} {'M^2*err(ord2)':>14s} {'M^2*err(unipc)':>15s}")
    for m, s1, s2, s3 in series:
        print(f"{m:5d} {s1:14.4e} {s2:14.4e} {s3:15.4e}")

    for col, label in ((1, "M*err(ddim)"), (2, "M^2*err(ord2)")):
        vals = [row[col] for row in series]
        print(f"{label}: min/max = {min(vals) / max(vals):.3f}  (plateau, stays > 0.2)")
    s3s = [row[3] for row in series]
    print(f"M^2*err(unipc): final/max = {s3s[-1] / max(s3s):.3f}  (decays)")


if __name__ == "__main__":
    main()

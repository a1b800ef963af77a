"""Tour of noise schedules and backward-time grids.

A schedule fixes the forward marginal x_t = alpha_t x_0 + sigma_t z through
alpha and sigma; everything downstream is parameterized by the half-log-SNR
lambda(t) = log(alpha_t / sigma_t), which decreases in t.  Samplers walk a
grid t_0 > ... > t_M, i.e. lambda increases step by step.
"""

import numpy as np

from odeslab import build_grid, subsample_indices, ve_schedule, vp_linear_schedule


def main():
    ve = ve_schedule()
    vp = vp_linear_schedule()

    print("== lambda(t) on both schedules ==")
    for t in (10.0, 1.0, 0.5, 0.1, 1e-3):
        row = f"t={t:<8g} ve: {ve.lambda_of_t(t):9.4f}"
        if t <= 1.0:
            row += f"   vp-linear: {vp.lambda_of_t(t):9.4f}"
        print(row)

    print("\n== grid families, M=8, VE from t=10 to t=0.001 ==")
    for kind in ("uniform-lambda", "uniform-time"):
        grid = build_grid(ve, kind, 8, 10.0, 1e-3)
        with np.printoptions(precision=4, suppress=False):
            print(f"{kind:16s} times  {grid.times}")
            print(f"{'':16s} deltas {grid.deltas}")

    print("\n== subsampling a reference grid ==")
    # round-half-up node picking keeps the endpoints and spreads the rest
    print("M_ref=1000, M=4  ->", subsample_indices(4, 1000).tolist())
    print("M_ref=10,   M=3  ->", subsample_indices(3, 10).tolist())
    grid = build_grid(ve, "subsample-reference", 4, 10.0, 1e-3, m_ref=1000)
    print("subsampled times:", np.array2string(grid.times, precision=5))

    print("\n== sigma = 0 terminal node (vp-linear can reach t=0) ==")
    g0 = build_grid(vp, "uniform-time", 5, 0.9, 0.0)
    print("sigmas:", np.array2string(g0.sigmas, precision=4))
    print("terminal lambda is +inf:", g0.lambdas[-1])


if __name__ == "__main__":
    main()

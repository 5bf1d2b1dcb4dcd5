"""Accuracy of the ordered-exponential transform.

Prints the abelian deviation from the exponentiated line integral, the RK4
step ladder with observed orders, and the gauge-invariance gap.
"""
import argparse
import time

import numpy as np

from narf.gauge_field import GridSpec, apply_gauge, make_phantom, mollifier, random_gauge
from narf.ray_transport import line_integrals, nonabelian_radon


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--angles", type=int, default=180)
    args = ap.parse_args()
    grid = GridSpec(args.n, 1.0)

    A = make_phantom("gaussian_bump", grid)
    t0 = time.perf_counter()
    S = nonabelian_radon(A, n_angles=args.angles)
    took = time.perf_counter() - t0
    bump = lambda x1, x2: np.exp(-(x1**2 + x2**2) / 0.18) * mollifier(np.hypot(x1, x2), 1.0)
    ref = np.exp(line_integrals(bump, S.offsets, S.angles, 1.0, nodes=64, panels=32))
    print(f"abelian: max rel deviation {np.abs(S.values[..., 0, 0] - ref).max() / np.abs(ref).max():.2e}"
          f" in {took:.1f} s")

    B = make_phantom("smooth_random", grid, m=2, seed=3, amplitude=3.0)
    angles = [0.3, 1.1, 2.5]
    fine = nonabelian_radon(B, angles=angles, step=grid.h / 32).values
    factors = (2.0, 1.0, 0.5, 0.25)
    errs = np.array([np.abs(nonabelian_radon(B, angles=angles, step=grid.h * k).values - fine).max()
                     for k in factors])
    for k, e in zip(factors, errs):
        print(f"step {k:5.2f} h  error {e:.3e}")
    print("orders", np.round(np.log2(errs[:-1] / errs[1:]), 2))

    C = make_phantom("smooth_random", grid, m=2, seed=3)
    Cg = apply_gauge(C, random_gauge(grid, 2, seed=5))
    S1 = nonabelian_radon(C, n_angles=32, step=grid.h / 4)
    S2 = nonabelian_radon(Cg, n_angles=32, step=grid.h / 4)
    print(f"gauge gap {np.abs(S1.values - S2.values).max() / np.abs(S1.values).max():.2e}")


if __name__ == "__main__":
    main()

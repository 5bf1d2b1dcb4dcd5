"""Attenuated round-trip error over a grid/angle refinement ladder; writes JSON rows."""
import argparse
import json
import time

from narf.attenuated_inversion import invert_attenuated, relative_error
from narf.gauge_field import GridSpec, make_phantom
from narf.ray_transport import attenuated_radon


def run(n, count, m, amplitude):
    grid = GridSpec(n, 1.0)
    if m == 1:
        A = make_phantom("disk", grid, amplitude=amplitude)
        f = make_phantom("scalar_source", grid, m=1, seed=0)
    else:
        A = make_phantom("smooth_random", grid, m=m, seed=11, amplitude=amplitude)
        f = make_phantom("scalar_source", grid, m=m, seed=4)
    t0 = time.perf_counter()
    ws = invert_attenuated(A, attenuated_radon(A, f, n_angles=count))
    return {"n": n, "angles": count, "m": m, "amplitude": amplitude,
            "error": relative_error(ws.f_hat, f), "seconds": time.perf_counter() - t0,
            "contour_refinement": ws.diagnostics.get("contour_refinement"),
            "family_min_det": ws.diagnostics["family_min_det"]}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=2)
    ap.add_argument("--amplitude", type=float, default=0.5)
    ap.add_argument("--levels", default="32:64,64:128,128:256")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    rows = []
    for level in args.levels.split(","):
        n, count = (int(v) for v in level.split(":"))
        rows.append(run(n, count, args.m, args.amplitude))
        r = rows[-1]
        print(f"n={r['n']:<4} angles={r['angles']:<4} error={r['error']:.3e}  {r['seconds']:.1f} s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()

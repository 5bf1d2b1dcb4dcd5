"""Residuals of the right-inverse identities on a Gaussian bump across grid sizes."""
import argparse

from narf.cauchy_ops import identity_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256, 512])
    args = ap.parse_args()
    rows = {n: identity_suite(n) for n in args.sizes}
    names = list(next(iter(rows.values())))
    print("n     " + "  ".join(f"{k:>14}" for k in names))
    for n, res in rows.items():
        print(f"{n:<5} " + "  ".join(f"{res[k]:14.3e}" for k in names))


if __name__ == "__main__":
    main()

"""Moments of the tent Hutchinson estimate against Lebesgue, per iteration count."""
import argparse

import numpy as np

from fractrace.measures import coordinate, hutchinson_error_bound, hutchinson_estimate
from fractrace.systems import tent
from fractrace.traces import lebesgue_w1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-iters", type=int, default=16)
    args = ap.parse_args()
    s = tent()
    print(f"{'n':>3} {'atoms':>7} {'|E x - 1/2|':>12} {'|E x^2 - 1/3|':>14} {'W1 to Leb':>11} {'c^n diam':>10}")
    for n in range(1, args.max_iters + 1):
        mu = hutchinson_estimate(s, n)
        m1 = abs(float(mu.integrate(coordinate())) - 0.5)
        m2 = abs(float(mu.integrate(coordinate(0, 2))) - 1 / 3)
        w1 = lebesgue_w1(mu)
        bound = hutchinson_error_bound(s, n)
        assert w1 <= bound + 1e-15
        print(f"{n:3d} {len(mu):7d} {m1:12.3e} {m2:14.3e} {w1:11.3e} {bound:10.3e}")
    print("second-moment error is 1/(6 * 4^n) for the dyadic grid:", np.isclose(m2, 1 / (6 * 4 ** n)))


if __name__ == "__main__":
    main()

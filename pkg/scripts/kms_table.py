"""Truncated beta-KMS values on the test family over a range of beta."""
import argparse

import numpy as np

from fractrace.ifs import compute_branch_data
from fractrace.kms import KmsSpec, eval_kms_on_function
from fractrace.systems import load_system
from fractrace.traces import test_family


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", default="tent")
    ap.add_argument("--depth", type=int, default=10)
    ap.add_argument("--betas", type=float, nargs="*")
    args = ap.parse_args()
    s = load_system(args.system)
    br = compute_branch_data(s)
    b = br.branch_points[0]
    betas = args.betas or [np.log(s.N) + d for d in (0.05, 0.25, 0.5, 1.0, 2.0, 4.0)]
    fam = [m.fn for m in test_family(s, br)][:6]
    print(f"{s.name}, b = {b.round(6).tolist()}, depth {args.depth}")
    print(f"{'beta':>8} " + " ".join(f"{f.name:>14}" for f in fam) + f" {'bound':>10}")
    for beta in betas:
        spec = KmsSpec.for_system(s, b, beta, args.depth)
        vals = [eval_kms_on_function(s, spec, f) for f in fam]
        print(f"{beta:8.4f} " + " ".join(f"{v:14.8f}" for v, _ in vals) + f" {max(e for _, e in vals):10.2e}")


if __name__ == "__main__":
    main()

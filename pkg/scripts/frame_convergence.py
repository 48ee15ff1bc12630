"""Frame-sum residual window as the number of frame members doubles."""
import argparse

from fractrace.correspondence import build_truncated_frame, measured_window, verify_frame_sum
from fractrace.suite import frame_test_function
from fractrace.systems import load_system


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", default="tent")
    ap.add_argument("--level", type=int, default=1)
    ap.add_argument("--doublings", type=int, default=4)
    ap.add_argument("--tol", type=float, default=1e-3)
    args = ap.parse_args()
    s = load_system(args.system)
    a = frame_test_function(s)
    frame = build_truncated_frame(s, args.level)
    grid = frame.default_grid()
    print(f"{s.name}, level {args.level}, {len(grid)} grid points")
    print(f"{'M':>6} {'exclusion':>11} {'window':>11} {'ratio':>7} {'residual':>10} {'recon err':>10}")
    prev = None
    M = frame.size
    for _ in range(args.doublings + 1):
        f = build_truncated_frame(s, args.level, M, grid=grid)
        w = measured_window(f, a, args.tol, grid)
        ratio = f"{prev / w:7.3f}" if prev and w > 0 else "      -"
        print(f"{f.size:6d} {f.exclusion_radius:11.4e} {w:11.4e} {ratio} {verify_frame_sum(f, a, grid):10.2e} "
              f"{f.reconstruction_error:10.2e}")
        prev, M = w, 2 * M


if __name__ == "__main__":
    main()

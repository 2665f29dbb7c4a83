"""Compare the numba and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py --N 256 1024 4096 --T 31
"""

import argparse

from dsmc.bench import bench_combine_kernel, bench_smoother


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--N", type=int, nargs="+", default=[256, 1024, 4096])
    parser.add_argument("--T", type=int, default=31)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rows = bench_combine_kernel(args.N, args.repeats)
    rows += bench_smoother(args.T, max(args.N), repeats=2)
    seconds = {(r["kernel"], r["N"], r["backend"]): r["seconds"] for r in rows}
    print(f"{'kernel':<18}{'N':>7}{'numpy s':>12}{'numba s':>12}{'speedup':>10}")
    for kernel, n in dict.fromkeys((r["kernel"], r["N"]) for r in rows):
        slow = seconds.get((kernel, n, "numpy"))
        fast = seconds.get((kernel, n, "numba"))
        ratio = f"{slow / fast:9.1f}x" if slow and fast else "       n/a"
        fmt = lambda v: f"{v:12.4f}" if v is not None else f"{'n/a':>12}"
        print(f"{kernel:<18}{n:>7}{fmt(slow)}{fmt(fast)}{ratio}")


if __name__ == "__main__":
    main()

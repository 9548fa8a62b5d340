"""Wall-clock scaling along rows (n), raw features (d) and bank size (k).

    python benchmarks/scaling.py [--repeats 3]
"""
import argparse

from automan import bench

AXES = {"d": (100, 200), "n": (1000, 2000), "k": (len(bench.SCALING_BANK), len(bench.SCALING_BANK) // 2)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    cfg = bench.BenchConfig(repeats=args.repeats)
    for axis, sizes in AXES.items():
        print(bench.benchmark_scaling("scaling", sizes, cfg, axis=axis).to_text())


if __name__ == "__main__":
    main()

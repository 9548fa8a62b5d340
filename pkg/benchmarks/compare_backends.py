"""Numba vs pure-numpy kernel timings, plus a short end-to-end training comparison.

    python benchmarks/compare_backends.py [--size 200000] [--steps 200]
"""
import argparse
import time

from automan import _kernels as Kn
from automan import bench, data, trainer


def train_seconds(steps: int) -> float:
    ds = data.split(data.synthesize("product+log", 2000, 6, seed=0), seed=0)
    cfg = trainer.TrainConfig(steps=steps, eval_interval=steps)
    start = time.perf_counter()
    trainer.train(ds, trainer.build_model(ds, cfg), cfg)
    return time.perf_counter() - start


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=200_000)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()

    print(bench.kernel_table(bench.benchmark_kernels(size=args.size)))
    for name in Kn.available_backends():
        with Kn.use_backend(name):
            train_seconds(5)
            print(f"{name:>6}: {args.steps} training steps in {train_seconds(args.steps):.3f}s")


if __name__ == "__main__":
    main()

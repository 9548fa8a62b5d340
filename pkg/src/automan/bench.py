"""Wall-clock scaling harness and kernel backend comparison.

Training cost should grow linearly in the number of rows n, the number of raw
features d and the number of transform kinds k. Each axis is timed with the
other two held fixed:

* d and k: a fixed number of full-batch steps, so per-row mask work dominates
  the fixed per-step overhead;
* n: a fixed number of epochs at minibatch size 64, so the step count grows
  with n.
"""
from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as Kn
from . import autodiff as ad
from . import data as D
from . import transforms as T
from ._threads import limited_threads
from .pipeline import Batch, PipelineModel
from .trainer import Adam

# the scaling generator has no categoricals, so GroupBy never builds a branch
SCALING_BANK = tuple(k for k in T.NUMERIC_KINDS if k != "group_by")


@dataclass
class BenchConfig:
    n: int = 2048
    d: int = 100
    steps: int = 10
    epochs: int = 2
    minibatch: int = 64
    repeats: int = 3
    seed: int = 0
    h: int = 5
    h_glb: int = 16
    hidden: int = 256


@dataclass
class ScalingTable:
    axis: str
    sizes: list[int]
    seconds: list[float]
    runs: list[list[float]] = field(default_factory=list)

    @property
    def ratios(self) -> list[float]:
        return [b / a for a, b in zip(self.seconds, self.seconds[1:])]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("axis,size,median_seconds,ratio_to_previous\n")
        for i, (s, t) in enumerate(zip(self.sizes, self.seconds)):
            r = "" if i == 0 else repr(self.ratios[i - 1])
            buf.write(f"{self.axis},{s},{t!r},{r}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{self.axis:>4} {'size':>8} {'seconds':>10} {'ratio':>7}"]
        for i, (s, t) in enumerate(zip(self.sizes, self.seconds)):
            r = "-" if i == 0 else f"{self.ratios[i - 1]:.3f}"
            lines.append(f"{self.axis:>4} {s:>8} {t:>10.4f} {r:>7}")
        return "\n".join(lines) + "\n"


def _model(ds: D.Dataset, cfg: BenchConfig, kinds=SCALING_BANK) -> PipelineModel:
    model = PipelineModel(ds.schema, ds.n_classes, h=cfg.h, h_glb=cfg.h_glb, hidden=cfg.hidden, kinds=kinds, seed=cfg.seed)
    model.fit_statistics(ds)
    return model


def _run_steps(model: PipelineModel, batches) -> float:
    params = model.parameters()
    opt = Adam(params)
    start = time.perf_counter()
    for batch in batches:
        _, pred = model.forward(batch)
        opt.step(ad.backward(model.loss(pred, batch.y), params))
    return time.perf_counter() - start


def _time_full_batch(ds, cfg, kinds=SCALING_BANK) -> float:
    model = _model(ds, cfg, kinds)
    full = Batch.from_dataset(ds)
    _run_steps(model, [full])  # warm-up: kernel compilation, allocator
    return _run_steps(model, [full] * cfg.steps)


def _time_epochs(ds, cfg) -> float:
    model = _model(ds, cfg)
    full = Batch.from_dataset(ds)
    rng = np.random.default_rng(cfg.seed)
    _run_steps(model, [full.take(np.arange(min(cfg.minibatch, len(full))))])
    batches = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(full))
        batches += [full.take(order[s : s + cfg.minibatch]) for s in range(0, len(order), cfg.minibatch)]
    return _run_steps(model, batches)


def benchmark_scaling(generator: str = "scaling", sizes=(100, 200), config: BenchConfig | None = None, axis: str = "d") -> ScalingTable:
    """Median wall-clock over ``config.repeats`` runs for each size on one axis.

    ``axis`` is ``"d"`` (raw features), ``"n"`` (rows) or ``"k"`` (number of
    transform kinds, taken as a prefix of the numeric bank).
    """
    cfg = config or BenchConfig()
    if axis not in ("d", "n", "k"):
        raise ValueError(f"axis must be 'd', 'n' or 'k', got {axis!r}")
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError("need at least two positive sizes")
    if axis == "k" and max(sizes) > len(SCALING_BANK):
        raise ValueError(f"bank has only {len(SCALING_BANK)} kinds")

    runs = []
    with limited_threads():
        for size in sizes:
            times = []
            for r in range(cfg.repeats):
                if axis == "d":
                    ds = D.synthesize(generator, cfg.n, size, seed=cfg.seed + r)
                    times.append(_time_full_batch(ds, cfg))
                elif axis == "k":
                    ds = D.synthesize(generator, cfg.n, cfg.d, seed=cfg.seed + r)
                    times.append(_time_full_batch(ds, cfg, SCALING_BANK[:size]))
                else:
                    ds = D.synthesize(generator, size, cfg.d, seed=cfg.seed + r)
                    times.append(_time_epochs(ds, cfg))
            runs.append(times)
    return ScalingTable(axis, sizes, [float(np.median(t)) for t in runs], runs)


def benchmark_kernels(repeats: int = 5, size: int = 200_000, seed: int = 0) -> dict[str, dict[str, float]]:
    """Best-of-``repeats`` seconds per kernel for every available backend."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(size // 8, 8))
    cuts = np.tile([-0.5, 0.0, 0.5], (8, 1))
    codes = rng.integers(0, 10, size)
    vals = rng.normal(size=(size, 1))
    w = rng.normal(size=(size // 8, 8))
    pts = rng.uniform(-3, 3, (4096, 1))
    c, mu, s = rng.normal(size=16), rng.uniform(-3, 3, (16, 1)), np.full(16, 0.5)
    tgt = np.sin(pts[:, 0])
    z, std = Kn.std_norm_fwd(w)
    g = np.ones_like(w)

    calls = {
        "row_prod": lambda: Kn.row_prod(x),
        "bucketize": lambda: Kn.bucketize(x, cuts),
        "group_mean_table": lambda: Kn.group_mean_table(codes, vals, 10),
        "std_norm_fwd": lambda: Kn.std_norm_fwd(w),
        "std_norm_bwd": lambda: Kn.std_norm_bwd(w, std, g),
        "gauss_sum_eval": lambda: Kn.gauss_sum_eval(pts, c, mu, s),
        "gauss_sum_loss_grad": lambda: Kn.gauss_sum_loss_grad(pts, tgt, c, mu, np.log(s)),
    }
    out: dict[str, dict[str, float]] = {}
    for name in Kn.available_backends():
        with Kn.use_backend(name):
            row = {}
            for kname, fn in calls.items():
                fn()
                best = np.inf
                for _ in range(repeats):
                    t = time.perf_counter()
                    fn()
                    best = min(best, time.perf_counter() - t)
                row[kname] = best
            out[name] = row
    return out


def kernel_table(results: dict[str, dict[str, float]]) -> str:
    backends = list(results)
    names = list(next(iter(results.values())))
    lines = ["kernel," + ",".join(f"{b}_seconds" for b in backends) + ("" if len(backends) < 2 else ",speedup")]
    for k in names:
        cells = [repr(results[b][k]) for b in backends]
        if len(backends) == 2:
            cells.append(repr(results["numpy"][k] / results["numba"][k]))
        lines.append(",".join([k] + cells))
    return "\n".join(lines) + "\n"

"""Training loop, evaluation, checkpoints and feature export."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from ._threads import limited_threads
from .data import Dataset, Schema
from .errors import DataError, NumericError
from .pipeline import Batch, PipelineModel, RawMLP, predict_labels

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    h: int = 5
    h_glb: int = 16
    eval_interval: int = 50
    patience: int = 10
    hidden: int = 256

    def __post_init__(self):
        for name in ("steps", "batch_size", "h", "h_glb", "eval_interval", "patience", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if not self.lr > 0:
            raise ValueError("TrainConfig.lr must be positive")
        if self.seed < 0:
            raise ValueError("TrainConfig.seed must be non-negative")


@dataclass
class TrainReport:
    metric: str
    validation_split: str
    steps_run: int = 0
    best_step: int = 0
    final_metric: float = float("nan")
    curve_steps: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    stopped_early: bool = False
    provenance: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [
            f"metric: {self.metric} on {self.validation_split}",
            f"steps run: {self.steps_run} (best at {self.best_step}, early stop: {self.stopped_early})",
            f"final {self.metric}: {self.final_metric!r}",
            "step,train_loss,val_metric",
        ]
        lines += [f"{s},{tl!r},{vm!r}" for s, tl, vm in zip(self.curve_steps, self.train_loss, self.val_metric)]
        if self.provenance:
            lines.append("engineered features:")
            lines += [f"  {p}" for p in self.provenance]
        return "\n".join(lines) + "\n"


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = grads[p]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _better(a: float, b: float, task: str) -> bool:
    return a > b if task == "classification" else a < b


def predict(model, ds: Dataset, chunk: int = 4096) -> np.ndarray:
    batch = Batch.from_dataset(ds)
    outs = []
    for s in range(0, len(batch), chunk):
        outs.append(model.forward(batch.take(slice(s, s + chunk)))[1].data)
    return np.concatenate(outs) if outs else np.zeros(0)


def metric_from_predictions(pred: np.ndarray, y: np.ndarray, task: str) -> float:
    if len(y) == 0:
        raise DataError("cannot compute a metric on an empty split")
    if task == "classification":
        return float(100.0 * np.mean(predict_labels(pred, task) == y))
    return float(np.mean(np.abs(pred - y)))


def evaluate(model, ds: Dataset, split: str = "test") -> float:
    """Accuracy in percent (classification) or MAE (regression) on one split."""
    part = ds.part(split)
    if len(part) == 0:
        raise DataError(f"split {split!r} is empty")
    return metric_from_predictions(predict(model, part), part.y, ds.schema.task)


def build_model(ds: Dataset, config: TrainConfig, **kw) -> PipelineModel:
    return PipelineModel.for_dataset(ds, h=config.h, h_glb=config.h_glb, hidden=config.hidden, seed=config.seed, **kw)


def build_baseline(ds: Dataset, config: TrainConfig) -> RawMLP:
    return RawMLP.for_dataset(ds, hidden=config.hidden, seed=config.seed)


def train(ds: Dataset, model, config: TrainConfig) -> tuple[object, TrainReport]:
    """Minibatch Adam on the task loss; the best-validation parameters are kept.

    Statistics are (re)fitted on the training rows first. If the dataset has
    no validation rows the training rows are used for model selection.
    """
    task = ds.schema.task
    train_idx = ds.split_indices("train")
    if len(train_idx) == 0:
        raise DataError("training split is empty")
    model.fit_statistics(ds.part("train"))
    val_name = "validation" if len(ds.split_indices("validation")) else "train"
    val = ds.part(val_name)
    report = TrainReport("accuracy" if task == "classification" else "mae", val_name)

    full = Batch.from_dataset(ds)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    best_state, best_metric, stale = None, None, 0
    window_losses: list[float] = []
    order = rng.permutation(train_idx)
    cursor = 0
    epoch_start = time.perf_counter()

    with limited_threads():
        for step in range(1, config.steps + 1):
            if cursor >= len(order):
                report.epoch_seconds.append(time.perf_counter() - epoch_start)
                epoch_start = time.perf_counter()
                order = rng.permutation(train_idx)
                cursor = 0
            idx = order[cursor : cursor + config.batch_size]
            cursor += config.batch_size
            batch = full.take(idx)
            _, pred = model.forward(batch)
            loss = model.loss(pred, batch.y)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at step {step}")
            grads = ad.backward(loss, params)
            opt.step(grads)
            window_losses.append(value)
            report.steps_run = step

            if step % config.eval_interval == 0 or step == config.steps:
                metric = metric_from_predictions(predict(model, val), val.y, task)
                report.curve_steps.append(step)
                report.train_loss.append(float(np.mean(window_losses)))
                report.val_metric.append(metric)
                window_losses = []
                if best_metric is None or _better(metric, best_metric, task):
                    best_metric, best_state, stale = metric, model.state_dict(), 0
                    report.best_step = step
                else:
                    stale += 1
                    if stale >= config.patience:
                        report.stopped_early = True
                        log.info("early stop at step %d", step)
                        break

    if cursor >= len(order) or not report.epoch_seconds:
        report.epoch_seconds.append(time.perf_counter() - epoch_start)
    model.load_state_dict(best_state)
    report.final_metric = float(best_metric)
    if isinstance(model, PipelineModel):
        report.provenance = model.provenance()
    return model, report


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def engineered_matrix(model, ds: Dataset, chunk: int = 4096) -> np.ndarray:
    batch = Batch.from_dataset(ds)
    parts = [model.engineer(batch.take(slice(s, s + chunk))).data for s in range(0, len(batch), chunk)]
    return np.vstack(parts) if parts else np.zeros((0, model.h_glb))


def write_features(model: PipelineModel, ds: Dataset, path) -> None:
    cols = [c["column"] for c in model.describe()]
    X = engineered_matrix(model, ds)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def manifest(model: PipelineModel) -> dict:
    return {
        "h_glb": model.h_glb,
        "schema_digest": model.schema.digest(),
        "columns": model.describe(),
    }


def write_manifest(model: PipelineModel, path) -> None:
    Path(path).write_text(json.dumps(manifest(model), indent=2) + "\n", encoding="utf-8")


def export_features(model: PipelineModel, ds: Dataset, out_dir) -> list[Path]:
    """Write ``features_<split>.csv`` per non-empty split plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    splits = ["train", "validation", "test"] if ds.split is not None else ["train"]
    for name in splits:
        part = ds.part(name)
        if len(part) == 0:
            continue
        p = out / f"features_{name}.csv"
        write_features(model, part, p)
        written.append(p)
    p = out / "manifest.json"
    write_manifest(model, p)
    written.append(p)
    return written


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model, ds: Dataset, config: TrainConfig | None = None, extra: dict | None = None) -> None:
    """Parameters, fitted statistics, schema and code tables in one ``.npz``."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "model": "pipeline" if isinstance(model, PipelineModel) else "raw_mlp",
        "schema": model.schema.to_dict(),
        "schema_digest": model.schema.digest(),
        "n_classes": model.n_classes,
        "model_config": model.config,
        "train_config": asdict(config) if config else None,
        "cat_levels": ds.cat_levels,
        "classes": ds.classes,
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    if isinstance(model, PipelineModel):
        arrays.update({f"fit/{k}": v for k, v in model.fitted_state().items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, schema: Schema | None = None):
    """Rebuild a model from :func:`save_checkpoint` output; returns (model, meta).

    Raises DataError when ``schema`` is given and its digest differs from the
    stored one, or when the file is not a readable checkpoint.
    """
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    if "meta" not in arrays:
        raise DataError("not a checkpoint file (no metadata)")
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {meta.get('version')}")
    stored = Schema.from_dict(meta["schema"])
    if stored.digest() != meta["schema_digest"]:
        raise DataError("checkpoint schema digest is corrupt")
    if schema is not None and schema.digest() != meta["schema_digest"]:
        raise DataError("schema does not match the checkpoint (schema hash differs)")
    cfg = dict(meta["model_config"])
    if meta["model"] == "pipeline":
        model = PipelineModel(stored, meta["n_classes"], **cfg)
        model.load_fitted_state({k[4:]: v for k, v in arrays.items() if k.startswith("fit/")})
    else:
        model = RawMLP(stored, meta["n_classes"], **cfg)
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    return model, meta


# ---------------------------------------------------------------------------
# multi-trial protocol
# ---------------------------------------------------------------------------


def seed_sweep(ds: Dataset, config: TrainConfig, trials: int = 10, baseline: bool = True, fractions=(0.8, 0.1, 0.1)) -> dict:
    """Repeat split + train over seeds 0..trials-1 and report mean and std of the test metric."""
    from .data import split as split_data

    engineered, raw = [], []
    for seed in range(trials):
        cfg = TrainConfig(**{**asdict(config), "seed": config.seed + seed})
        part = split_data(ds, fractions, seed=cfg.seed)
        model, _ = train(part, build_model(part, cfg), cfg)
        engineered.append(evaluate(model, part, "test"))
        if baseline:
            base, _ = train(part, build_baseline(part, cfg), cfg)
            raw.append(evaluate(base, part, "test"))
    out = {
        "trials": trials,
        "metric": "accuracy" if ds.schema.task == "classification" else "mae",
        "engineered": engineered,
        "engineered_mean": float(np.mean(engineered)),
        "engineered_std": float(np.std(engineered)),
    }
    if baseline:
        out.update(raw=raw, raw_mean=float(np.mean(raw)), raw_std=float(np.std(raw)))
    return out

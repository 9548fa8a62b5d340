import json

import numpy as np
import pytest

from automan import data as D
from automan import trainer as TR
from automan.errors import DataError, NumericError
from automan.pipeline import PipelineModel

from conftest import mixed_dataset


def quick(**kw):
    return TR.TrainConfig(**{"steps": 60, "eval_interval": 20, "hidden": 16, **kw})


def test_config_validation():
    for bad in [{"steps": 0}, {"lr": 0.0}, {"batch_size": -1}, {"seed": -2}]:
        with pytest.raises(ValueError):
            TR.TrainConfig(**bad)


def test_single_step_moves_every_touched_parameter(tiny_regression):
    ds = tiny_regression
    cfg = TR.TrainConfig(steps=1, hidden=16)
    model = TR.build_model(ds, cfg)
    model.fit_statistics(ds.part("train"))
    before = model.state_dict()
    from automan import autodiff as ad
    from automan.pipeline import Batch

    rng = np.random.default_rng(cfg.seed)
    idx = rng.permutation(ds.split_indices("train"))[: cfg.batch_size]
    batch = Batch.from_dataset(ds).take(idx)
    grads = ad.backward(model.loss(model.forward(batch)[1], batch.y), model.parameters())
    touched = {n for n, p in model.named_parameters() if np.any(grads[p] != 0)}

    model, report = TR.train(ds, model, cfg)
    after = model.state_dict()
    assert report.steps_run == 1 and report.curve_steps == [1]
    for name in touched:
        assert not np.array_equal(before[name], after[name]), name


def test_same_seed_is_bit_identical(tiny_regression):
    runs = []
    for _ in range(2):
        model, rep = TR.train(tiny_regression, TR.build_model(tiny_regression, quick()), quick())
        runs.append((model.state_dict(), rep.train_loss, rep.val_metric))
    for k in runs[0][0]:
        np.testing.assert_array_equal(runs[0][0][k], runs[1][0][k])
    assert runs[0][1:] == runs[1][1:]


def test_best_validation_state_is_restored(tiny_regression):
    ds = tiny_regression
    model, rep = TR.train(ds, TR.build_model(ds, quick(steps=200)), quick(steps=200))
    assert rep.final_metric == min(rep.val_metric)
    assert TR.evaluate(model, ds, "validation") == pytest.approx(rep.final_metric, rel=1e-12)


def test_classification_keeps_max_accuracy():
    ds = D.split(mixed_dataset(n=150, seed=2, task="classification"), seed=0)
    model, rep = TR.train(ds, TR.build_model(ds, quick()), quick())
    assert rep.metric == "accuracy"
    assert rep.final_metric == max(rep.val_metric)


def test_early_stop(tiny_regression):
    cfg = quick(steps=2000, eval_interval=5, patience=2, lr=0.5)
    _, rep = TR.train(tiny_regression, TR.build_model(tiny_regression, cfg), cfg)
    assert rep.stopped_early and rep.steps_run < 2000


def test_non_finite_loss_names_step(tiny_regression):
    ds = tiny_regression
    ds.y = ds.y.copy()
    ds.y[ds.split_indices("train")] = 1e308
    cfg = quick(lr=1e3)
    with pytest.raises(NumericError, match="step"):
        with np.errstate(all="ignore"):
            TR.train(ds, TR.build_model(ds, cfg), cfg)


def test_curves_have_consistent_lengths(tiny_regression):
    cfg = quick(steps=70, patience=100)
    _, rep = TR.train(tiny_regression, TR.build_model(tiny_regression, cfg), cfg)
    assert rep.curve_steps == [20, 40, 60, 70]
    assert len(rep.train_loss) == len(rep.val_metric) == 4
    assert len(rep.provenance) == 16


# -- evaluate -----------------------------------------------------------------


class _Const:
    def __init__(self, value, task="regression", n_classes=0):
        self.value, self.task = value, task

    def forward(self, batch):
        from automan import autodiff as ad

        n = len(batch)
        return None, ad.constant(np.full(n, self.value) if np.ndim(self.value) == 0 else np.tile(self.value, (n, 1)))


def test_evaluate_median_predictor(tiny_regression):
    ds = tiny_regression
    test = ds.part("test")
    med = float(np.median(test.y))
    assert TR.evaluate(_Const(med), ds, "test") == pytest.approx(np.mean(np.abs(test.y - med)), rel=1e-12)


def test_perfect_accuracy():
    assert TR.metric_from_predictions(np.eye(3), np.array([0, 1, 2]), "classification") == 100.0


def test_empty_split(tiny_regression):
    ds = D.assign_split(tiny_regression, ["train"] * len(tiny_regression))
    with pytest.raises(DataError):
        TR.evaluate(_Const(0.0), ds, "test")


# -- export and checkpoints ---------------------------------------------------------------


@pytest.fixture
def trained(tiny_regression):
    cfg = quick()
    model, _ = TR.train(tiny_regression, TR.build_model(tiny_regression, cfg), cfg)
    return model, tiny_regression, cfg


def test_manifest_entries(trained, tmp_path):
    model, ds, _ = trained
    TR.export_features(model, ds, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert len(man["columns"]) == model.h_glb
    entry = man["columns"][0]
    assert {"transform", "provenance", "inputs", "constants", "column", "global_weight", "rank"} <= set(entry)
    for inp in entry["inputs"]:
        assert len(inp["weight"].replace(".", "").lstrip("0").split("e")[0]) <= 4
    header = (tmp_path / "features_train.csv").read_text().splitlines()[0].split(",")
    assert header == [c["column"] for c in man["columns"]]


def test_reexport_is_byte_identical(trained, tmp_path):
    model, ds, _ = trained
    a = TR.export_features(model, ds, tmp_path / "a")
    b = TR.export_features(model, ds, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_checkpoint_round_trip(trained, tmp_path):
    model, ds, cfg = trained
    TR.save_checkpoint(tmp_path / "m.npz", model, ds, cfg)
    back, meta = TR.load_checkpoint(tmp_path / "m.npz", ds.schema)
    assert meta["train_config"]["seed"] == cfg.seed
    np.testing.assert_array_equal(TR.engineered_matrix(back, ds), TR.engineered_matrix(model, ds))
    np.testing.assert_array_equal(TR.predict(back, ds), TR.predict(model, ds))


def test_checkpoint_rejects_other_schema(trained, tmp_path):
    model, ds, cfg = trained
    TR.save_checkpoint(tmp_path / "m.npz", model, ds, cfg)
    other = D.Schema(ds.schema.columns[:-1], "y", "regression")
    with pytest.raises(DataError, match="schema"):
        TR.load_checkpoint(tmp_path / "m.npz", other)
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(DataError):
        TR.load_checkpoint(tmp_path / "junk.npz")


def test_raw_baseline_checkpoint(tiny_regression, tmp_path):
    cfg = quick()
    base, _ = TR.train(tiny_regression, TR.build_baseline(tiny_regression, cfg), cfg)
    TR.save_checkpoint(tmp_path / "b.npz", base, tiny_regression, cfg)
    back, meta = TR.load_checkpoint(tmp_path / "b.npz")
    assert meta["model"] == "raw_mlp"
    np.testing.assert_array_equal(TR.predict(back, tiny_regression), TR.predict(base, tiny_regression))


def test_seed_sweep_shape(tiny_regression):
    res = TR.seed_sweep(tiny_regression, quick(steps=20), trials=2)
    assert res["trials"] == 2 and len(res["engineered"]) == len(res["raw"]) == 2
    assert res["engineered_std"] >= 0


@pytest.mark.xfail(strict=True, reason="a branch whose outputs stay outside the global top-h has no path to the loss")
def test_every_parameter_gets_gradient_in_first_epoch():
    """Walks one real epoch of updates so the global selection can shift."""
    from automan import autodiff as ad
    from automan.pipeline import Batch

    ds = D.split(mixed_dataset(n=2000, seed=6), seed=0)
    model = PipelineModel.for_dataset(ds, hidden=16)
    model.fit_statistics(ds.part("train"))
    named = model.named_parameters()
    params = [p for _, p in named]
    opt = TR.Adam(params)
    seen = {n: False for n, _ in named}
    full = Batch.from_dataset(ds)
    train = np.random.default_rng(0).permutation(ds.split_indices("train"))
    for s in range(0, len(train), 64):
        b = full.take(train[s : s + 64])
        g = ad.backward(model.loss(model.forward(b)[1], b.y), params)
        for n, p in named:
            seen[n] |= bool(np.any(g[p] != 0))
        opt.step(g)
    assert all(seen.values()), [n for n, v in seen.items() if not v]


def test_gradient_reaches_exactly_the_globally_selected_branches():
    from automan import autodiff as ad

    ds = D.split(mixed_dataset(n=300, seed=6), seed=0)
    model = PipelineModel.for_dataset(ds, hidden=16)
    model.fit_statistics(ds.part("train"))
    train = ds.part("train")
    grads = ad.backward(model.loss(model.forward(train)[1], train.y), model.parameters())
    kept = set(model.global_mask.selection().indices.tolist())
    start = 0
    for b in model.branches:
        cols = set(range(start, start + b.width))
        start += b.width
        leaves = [p for m in b.masks() for p in [m.logits]] + list(b.node.params.values())
        live = [bool(np.any(grads[p] != 0)) for p in leaves]
        if not leaves:
            continue
        if cols & kept:
            assert any(live), b.node.name
        else:
            assert not any(live), b.node.name
    assert np.all(grads[model.global_mask.logits] != 0)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="at default settings the multiplicative branch does not isolate the product term; see notes")
def test_defaults_halve_raw_baseline_error():
    ds = D.split(D.synthesize("product+log", 2000, 6, seed=0), seed=0)
    cfg = TR.TrainConfig()
    model, _ = TR.train(ds, TR.build_model(ds, cfg), cfg)
    base, _ = TR.train(ds, TR.build_baseline(ds, cfg), cfg)
    assert TR.evaluate(model, ds, "validation") <= 0.5 * TR.evaluate(base, ds, "validation")

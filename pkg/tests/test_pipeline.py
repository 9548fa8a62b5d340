import numpy as np
import pytest

from automan import autodiff as ad
from automan import data as D
from automan import transforms as T
from automan.errors import DataError, ShapeError
from automan.pipeline import Batch, PipelineModel, RawMLP, task_loss

from conftest import mixed_dataset


def val(t):
    return t.data.item()


def numeric_schema(d=6, cats=0, temporal=0, L=8, task="regression"):
    cols = [D.Column(f"x{j + 1}", "numerical") for j in range(d)]
    cols += [D.Column(f"c{j}", "categorical") for j in range(cats)]
    cols += [D.Column(f"s{j}", "temporal", L) for j in range(temporal)]
    return D.Schema(tuple(cols), "y", task)


def built(ds, **kw):
    model = PipelineModel.for_dataset(ds, **kw)
    model.fit_statistics(ds.part("train") if ds.split is not None else ds)
    return model


def test_numeric_bank_width():
    model = PipelineModel(numeric_schema(6, cats=1), kinds=T.NUMERIC_KINDS)
    assert [b.width for b in model.branches] == [5, 5, 5, 1, 1, 5, 5, 1, 5]
    assert model.width == 33


@pytest.mark.parametrize("n_temporal,width", [(1, 23), (2, 46)])
def test_temporal_bank_width(n_temporal, width):
    model = PipelineModel(numeric_schema(0, temporal=n_temporal), kinds=T.TEMPORAL_KINDS)
    assert model.width == width


def test_no_temporal_columns_give_no_temporal_branch():
    ds = D.synthesize("product+log", 20, 6)
    model = built(ds)
    assert model.temporal_forward(ds) is None
    assert model.engineer(ds).shape == (20, 16)


def test_temporal_branch_output_width():
    ds = mixed_dataset(n=10)
    assert built(ds).temporal_forward(ds).shape == (10, 23)


def test_batch_of_one():
    ds = mixed_dataset(n=12)
    model = built(ds)
    one = Batch.from_dataset(ds).take([3])
    X_hat, pred = model.forward(one)
    assert X_hat.shape == (1, model.h_glb) and pred.shape == (1,)


def test_single_row_is_batch_independent():
    ds = mixed_dataset(n=12)
    model = built(ds)
    full = model.engineer(ds).data
    one = model.engineer(Batch.from_dataset(ds).take([5])).data
    np.testing.assert_allclose(one[0], full[5], rtol=1e-12)


def test_duplicate_rows_engineer_identically():
    ds = mixed_dataset(n=12)
    ds.numeric[7], ds.cat_raw[7], ds.cat_codes[7], ds.windows[0][7] = ds.numeric[2], ds.cat_raw[2], ds.cat_codes[2], ds.windows[0][2]
    X = built(ds).engineer(ds).data
    np.testing.assert_array_equal(X[7], X[2])


def test_width_constant_across_updates():
    ds = mixed_dataset(n=16)
    model = built(ds)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert model.engineer(ds).shape[1] == model.h_glb
        for m in model.masks():
            m.logits.data += rng.normal(size=m.logits.data.shape)


def test_categoricals_stay_out_of_numeric_transforms():
    ds = mixed_dataset(n=20)
    model = built(ds)
    for b in model.branches:
        if b.node.kind in ("polynomial", "logarithm", "custom_z_scale", "gaussian", "quantile",
                           "additive_aggregation", "multiplicative_aggregation"):
            assert b.names == ds.schema.names("numerical")
        if b.node.kind == "identity":
            assert b.names == ["x1", "x2", "x3", "x4", "x5", "x6", "color", "sales"]


def test_schema_mismatch():
    model = PipelineModel(numeric_schema(6))
    with pytest.raises(DataError):
        model.engineer(mixed_dataset(n=5))


def test_unknown_kinds_and_duplicates():
    with pytest.raises(ValueError):
        PipelineModel(numeric_schema(4), kinds=["polynomial", "nope"])
    with pytest.raises(ValueError):
        PipelineModel(numeric_schema(4), duplicates={"multiplicative": 3})
    with pytest.raises(ValueError):
        PipelineModel(numeric_schema(4), duplicates={"identity": 0})
    model = PipelineModel(numeric_schema(4), kinds=["identity"], duplicates={"identity": 3})
    assert len(model.branches) == 3


def test_small_d_narrows_local_masks():
    model = PipelineModel(numeric_schema(3), kinds=["polynomial"])
    assert model.branches[0].mask.h == 3


# -- losses ------------------------------------------------------------------------------


def test_mae_example():
    assert val(task_loss(ad.constant([1.0, 2.0]), np.array([2.0, 2.0]), "regression")) == 0.5


def test_cross_entropy_perfect_and_uniform():
    perfect = ad.constant([[60.0, -60.0], [-60.0, 60.0]])
    assert val(task_loss(perfect, np.array([0, 1]), "classification")) < 1e-12
    uniform = ad.constant(np.zeros((4, 5)))
    assert val(task_loss(uniform, np.array([0, 1, 2, 4]), "classification")) == pytest.approx(np.log(5))


def test_label_out_of_range():
    with pytest.raises(DataError):
        task_loss(ad.constant(np.zeros((2, 3))), np.array([0, 3]), "classification")
    with pytest.raises(ShapeError):
        task_loss(ad.constant([1.0, 2.0]), np.array([1.0]), "regression")


# -- end-to-end gradient -------------------------------------------------------------------


@pytest.mark.parametrize("task", ["regression", "classification"])
def test_end_to_end_gradient(task):
    ds = mixed_dataset(n=8, seed=11, task=task)
    model = built(ds, hidden=8, seed=2)
    params = model.parameters()
    # eps=1e-6 lets roundoff dominate on mask logits whose gradients are ~1e-8
    rel = ad.gradient_check(lambda _: model.loss(model.forward(ds)[1], ds.y), params, eps=1e-5)["rel_err"]
    assert rel.max() < 1e-4


def test_loss_decreases_on_learnable_task():
    from automan.trainer import Adam

    ds = D.synthesize("product+log", 256, 6, seed=1)
    model = built(ds, seed=0)
    params = model.parameters()
    opt = Adam(params, lr=1e-2)
    losses = []
    for _ in range(50):
        _, pred = model.forward(ds)
        loss = model.loss(pred, ds.y)
        losses.append(float(loss.data))
        opt.step(ad.backward(loss, params))
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


# -- provenance ------------------------------------------------------------------------------


def test_describe_has_one_entry_per_column():
    ds = mixed_dataset(n=20)
    model = built(ds)
    desc = model.describe()
    assert len(desc) == model.h_glb == len(model.provenance())
    assert sorted(d["rank"] for d in desc) == list(range(1, model.h_glb + 1))
    assert len({d["column"] for d in desc}) == len(desc)
    for d in desc:
        assert d["provenance"].startswith(T.NODE_TYPES[d["transform"]].name)


def test_raw_baseline_width():
    ds = mixed_dataset(n=10)
    model = RawMLP.for_dataset(ds)
    assert model.engineer(ds).shape == (10, 6 + 1 + 8)

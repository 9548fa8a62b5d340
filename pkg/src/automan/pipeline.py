"""Composition of local masks, transform bank, temporal branch, global mask and MLP head.

Routing of input columns:

* numerical columns feed every numeric transform;
* categorical columns are grouping keys for GroupBy and, scaled to
  [0, 1], candidates of the Identity transform;
* each temporal column feeds its own temporal transforms, and its current
  (last-step) value is an Identity candidate.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import transforms as T
from .autodiff import Tensor
from .data import Dataset, Schema
from .errors import DataError, NumericError, ShapeError
from .masking import DEFAULT_H, DEFAULT_H_GLOBAL, Mask, mask_forward

DEFAULT_HIDDEN = 256


@dataclass
class Batch:
    """Array views of a set of rows, in the layout the branches consume."""

    numeric: np.ndarray
    cat_codes: np.ndarray
    cat_scaled: np.ndarray
    windows: list[np.ndarray]
    y: np.ndarray
    schema_digest: str

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "Batch":
        return cls(
            np.ascontiguousarray(ds.numeric, dtype=np.float64),
            ds.cat_codes,
            ds.cat_scaled(),
            [np.ascontiguousarray(w, dtype=np.float64) for w in ds.windows],
            ds.y,
            ds.schema.digest(),
        )

    def take(self, idx) -> "Batch":
        return Batch(
            self.numeric[idx],
            self.cat_codes[idx],
            self.cat_scaled[idx],
            [w[idx] for w in self.windows],
            self.y[idx],
            self.schema_digest,
        )

    def __len__(self):
        return len(self.y)

    def identity_candidates(self) -> np.ndarray:
        last = [w[:, -1:] for w in self.windows]
        return np.hstack([self.numeric, self.cat_scaled, *last]) if last else np.hstack([self.numeric, self.cat_scaled])


def _as_batch(data, schema: Schema) -> Batch:
    batch = Batch.from_dataset(data) if isinstance(data, Dataset) else data
    if batch.schema_digest != schema.digest():
        raise DataError("data schema does not match the schema the model was built for")
    return batch


def _fmt_w(w) -> str:
    return f"{float(w):.4g}"


# ---------------------------------------------------------------------------
# branches
# ---------------------------------------------------------------------------


class MaskedBranch:
    """Local mask over candidate columns followed by one transform."""

    def __init__(self, node: T.TransformNode, mask: Mask, source, names: list[str], lookback: int | None = None):
        self.node = node
        self.mask = mask
        self.source = source
        self.names = names
        self.lookback = lookback

    @property
    def width(self) -> int:
        return self.node.out_width()

    def masks(self):
        return [self.mask]

    def params(self):
        return [self.mask.logits, *self.node.params.values()]

    def _input(self, batch: Batch) -> np.ndarray:
        if self.source == "numeric":
            return batch.numeric
        if self.source == "identity":
            return batch.identity_candidates()
        return batch.windows[self.source]

    def forward(self, batch: Batch) -> Tensor:
        X = self.node.encode(self._input(batch))
        _, selected = mask_forward(self.mask, ad.constant(X))
        return self.node.forward(selected)

    def _label(self, i: int) -> str:
        if self.lookback is None:
            return self.names[i]
        return f"{self.names[0]}[t-{self.lookback - 1 - i}]" if self.lookback - 1 - i else f"{self.names[0]}[t]"

    def describe(self) -> list[dict]:
        sel = self.mask.selection()
        node = self.node
        inputs = [{"feature": self._label(i), "weight": _fmt_w(w)} for i, w in zip(sel.indices, sel.weights)]
        if self.lookback is not None:
            offsets = [int(self.lookback - 1 - i) for i in sel.indices]
            if node.kind == "temporal_lag":
                prov = T.render(node.name, [self.names[0]], [offsets[0]])
                consts = {"offset": str(offsets[0])}
            else:
                prov = T.render(node.name, [self.names[0]], sorted(offsets))
                consts = {"offsets": ";".join(str(o) for o in sorted(offsets))}
            return [dict(transform=node.kind, provenance=prov, inputs=inputs, constants=consts)]
        if node.out_width() == 1:
            prov = node.provenance([self.names[i] for i in sel.indices])
            return [dict(transform=node.kind, provenance=prov, inputs=inputs, constants={})]
        cols = []
        for j, i in enumerate(sel.indices):
            consts = {k: T.fmt_const(v) for k, v in node.constants(j)}
            cols.append(
                dict(
                    transform=node.kind,
                    provenance=node.provenance([self.names[i]], j),
                    inputs=[inputs[j]],
                    constants=consts,
                )
            )
        return cols


class GroupByBranch:
    """GroupBy with a width-1 mask over keys and a width-1 mask over value columns."""

    def __init__(self, node: T.GroupBy, key_mask: Mask, value_mask: Mask, key_names, value_names):
        self.node = node
        self.key_mask = key_mask
        self.value_mask = value_mask
        self.key_names = key_names
        self.value_names = value_names

    width = 1

    def masks(self):
        return [self.key_mask, self.value_mask]

    def params(self):
        return [self.key_mask.logits, self.value_mask.logits]

    def forward(self, batch: Batch) -> Tensor:
        key = int(self.key_mask.selection().indices[0])
        means = self.node.candidate_matrix(key, batch.cat_codes)
        _, col = mask_forward(self.value_mask, ad.constant(means))
        key_weight = ad.take(ad.softmax(self.key_mask.logits), [key])
        return col * ad.reshape(key_weight, (1, 1))

    def describe(self):
        k = self.key_mask.selection()
        v = self.value_mask.selection()
        key, val = self.key_names[k.indices[0]], self.value_names[v.indices[0]]
        return [
            dict(
                transform="group_by",
                provenance=T.render("GroupBy", [key, val]),
                inputs=[
                    {"feature": key, "weight": _fmt_w(k.weights[0])},
                    {"feature": val, "weight": _fmt_w(v.weights[0])},
                ],
                constants={},
            )
        ]


class WindowBranch:
    """Unmasked transform of a whole lookback window."""

    def __init__(self, node: T.TransformNode, t: int, name: str, lookback: int):
        self.node = node
        self.t = t
        self.name = name
        self.lookback = lookback

    @property
    def width(self):
        return self.node.out_width()

    def masks(self):
        return []

    def params(self):
        return list(self.node.params.values())

    def forward(self, batch: Batch) -> Tensor:
        return self.node.forward(ad.constant(batch.windows[self.t]))

    def describe(self):
        node = self.node
        if node.out_width() == 1:
            prov = node.provenance([self.name])
            consts = {k: T.fmt_const(v) for k, v in node.constants(0)}
            return [dict(transform=node.kind, provenance=prov, inputs=[{"feature": self.name, "weight": "1"}], constants=consts)]
        cols = []
        for j in range(node.out_width()):
            off = self.lookback - 1 - j
            cols.append(
                dict(
                    transform=node.kind,
                    provenance=T.render(node.name, [self.name], [off]),
                    inputs=[{"feature": self.name, "weight": "1"}],
                    constants={"offset": str(off)},
                )
            )
        return cols


# ---------------------------------------------------------------------------
# heads and losses
# ---------------------------------------------------------------------------


class MLPHead:
    """Two affine layers with a rectifier in between."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        b1 = 1.0 / np.sqrt(in_dim)
        b2 = 1.0 / np.sqrt(hidden)
        self.W1 = ad.parameter(rng.uniform(-b1, b1, (in_dim, hidden)), name="head.W1")
        self.b1 = ad.parameter(rng.uniform(-b1, b1, hidden), name="head.b1")
        self.W2 = ad.parameter(rng.uniform(-b2, b2, (hidden, out_dim)), name="head.W2")
        self.b2 = ad.parameter(rng.uniform(-b2, b2, out_dim), name="head.b2")

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.relu(x @ self.W1 + self.b1) @ self.W2 + self.b2


def task_loss(pred: Tensor, y, task: str) -> Tensor:
    """Mean cross-entropy over logits, or mean absolute error."""
    y = np.asarray(y)
    if task == "classification":
        n, C = pred.shape
        if y.shape != (n,):
            raise ShapeError("loss", [pred.shape, y.shape])
        if y.size and (y.min() < 0 or y.max() >= C):
            raise DataError(f"classification labels must lie in [0, {C})")
        onehot = np.zeros((n, C))
        onehot[np.arange(n), y.astype(np.int64)] = 1.0
        return -(ad.log_softmax(pred, axis=1) * ad.constant(onehot)).sum() / n
    if pred.shape != y.shape:
        raise ShapeError("loss", [pred.shape, y.shape])
    return ad.absolute(pred - ad.constant(y.astype(np.float64))).mean()


def predict_labels(pred: np.ndarray, task: str) -> np.ndarray:
    return pred.argmax(axis=1) if task == "classification" else pred


class _Model:
    schema: Schema
    task: str
    n_classes: int
    head: MLPHead

    @property
    def n_outputs(self) -> int:
        return self.n_classes if self.task == "classification" else 1

    def _predict(self, x: Tensor) -> Tensor:
        out = self.head(x)
        if self.task == "regression":
            out = ad.reshape(out, (out.shape[0],))
        return out

    def loss(self, pred: Tensor, y) -> Tensor:
        return task_loss(pred, y, self.task)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.named_parameters():
            if state[k].shape != v.data.shape:
                raise DataError(f"parameter {k} has shape {state[k].shape}, expected {v.data.shape}")
            v.data[...] = state[k]


class PipelineModel(_Model):
    """Masks, transforms, global mask and MLP head for one schema.

    ``kinds`` restricts the bank to a subset of transform kinds;
    ``duplicates`` maps a kind to its instance count (default one each).
    """

    def __init__(
        self,
        schema: Schema,
        n_classes: int = 0,
        *,
        h: int = DEFAULT_H,
        h_glb: int = DEFAULT_H_GLOBAL,
        hidden: int = DEFAULT_HIDDEN,
        temporal_h: int = DEFAULT_H,
        kinds=None,
        duplicates: dict[str, int] | None = None,
        seed: int = 0,
    ):
        self.schema = schema
        self.task = schema.task
        self.n_classes = n_classes
        if self.task == "classification" and n_classes < 2:
            raise ValueError("classification needs at least two classes")
        kinds = tuple(kinds) if kinds is not None else T.ALL_KINDS
        unknown = set(kinds) - set(T.ALL_KINDS)
        if unknown:
            raise ValueError(f"unknown transform kinds {sorted(unknown)}")
        dup = duplicates or {}
        bad = set(dup) - set(T.ALL_KINDS)
        if bad or any(int(v) < 1 for v in dup.values()):
            raise ValueError(f"duplicates needs known kinds with counts >= 1, got {dup}")
        self.config = dict(h=h, h_glb=h_glb, hidden=hidden, temporal_h=temporal_h, kinds=list(kinds), duplicates=dict(dup), seed=seed)
        rng = np.random.default_rng(seed)

        num = schema.names("numerical")
        cat = schema.names("categorical")
        tmp = [(c.name, c.lookback) for c in schema.columns if c.kind == "temporal"]
        self.branches: list = []

        def count(kind):
            return dup.get(kind, 1) if kind in kinds else 0

        for kind in T.NUMERIC_KINDS:
            for _ in range(count(kind)):
                if kind == "group_by":
                    if cat and num:
                        node = T.GroupBy()
                        self.branches.append(
                            GroupByBranch(node, Mask(len(cat), 1, rng, "groupby.key"), Mask(len(num), 1, rng, "groupby.value"), cat, num)
                        )
                elif kind == "identity":
                    names = num + cat + [n for n, _ in tmp]
                    if names:
                        hh = min(h, len(names))
                        self.branches.append(MaskedBranch(T.Identity(hh), Mask(len(names), hh, rng, "identity.mask"), "identity", names))
                elif num:
                    hh = min(h, len(num))
                    node = T.NODE_TYPES[kind](hh)
                    self.branches.append(MaskedBranch(node, Mask(len(num), hh, rng, f"{kind}.mask"), "numeric", num))

        for t, (name, L) in enumerate(tmp):
            for kind in T.TEMPORAL_KINDS:
                for _ in range(count(kind)):
                    if kind == "temporal_aggregation":
                        hh = min(temporal_h, L)
                        node = T.TemporalAggregation(hh)
                        self.branches.append(MaskedBranch(node, Mask(L, hh, rng, f"{name}.{kind}.mask"), t, [name], L))
                    elif kind == "temporal_lag":
                        self.branches.append(MaskedBranch(T.TemporalLag(), Mask(L, 1, rng, f"{name}.{kind}.mask"), t, [name], L))
                    elif kind == "temporal_difference":
                        for k in T.DIFF_OFFSETS:
                            if k < L:
                                self.branches.append(WindowBranch(T.TemporalDifference(L, k), t, name, L))
                    else:
                        self.branches.append(WindowBranch(T.NODE_TYPES[kind](L), t, name, L))

        self.width = sum(b.width for b in self.branches)
        if self.width == 0:
            raise ValueError("schema yields no transformed features")
        self.h_glb = min(h_glb, self.width)
        self.global_mask = Mask(self.width, self.h_glb, rng, "global.mask")
        self.head = MLPHead(self.h_glb, hidden, self.n_outputs, rng)

    @classmethod
    def for_dataset(cls, ds: Dataset, **kw) -> "PipelineModel":
        return cls(ds.schema, ds.n_classes, **kw)

    # parameters ------------------------------------------------------------
    def named_parameters(self):
        out = []
        for i, b in enumerate(self.branches):
            for m in b.masks():
                out.append((f"b{i}.{m.logits.name}", m.logits))
            for k, p in b.node.params.items():
                out.append((f"b{i}.{b.node.kind}.{k}", p))
        out.append(("global.mask", self.global_mask.logits))
        for p in self.head.params():
            out.append((p.name, p))
        return out

    def masks(self) -> list[Mask]:
        return [m for b in self.branches for m in b.masks()] + [self.global_mask]

    def fitted_state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, b in enumerate(self.branches):
            for k, v in b.node.state().items():
                if b.node.params.get(k) is None:
                    out[f"b{i}.{k}"] = np.asarray(v)
        return out

    def load_fitted_state(self, state: dict[str, np.ndarray]) -> None:
        for i, b in enumerate(self.branches):
            sub = {k.split(".", 1)[1]: v for k, v in state.items() if k.startswith(f"b{i}.")}
            if sub:
                b.node.load_state(sub)

    def fit_statistics(self, train: Dataset) -> None:
        if len(train) == 0:
            raise DataError("training split is empty; cannot fit statistics")
        for b in self.branches:
            if isinstance(b, GroupByBranch):
                b.node.fit_groups(train.cat_codes, train.numeric, [len(t) for t in train.cat_levels])
            elif b.node.kind == "quantile":
                b.node.fit(train.numeric)

    # forward ---------------------------------------------------------------
    def concatenated(self, data) -> Tensor:
        batch = _as_batch(data, self.schema)
        outs = []
        for b in self.branches:
            out = b.forward(batch)
            if not np.all(np.isfinite(out.data)):
                raise NumericError(f"non-finite output from transform {b.node.name}")
            outs.append(out)
        return ad.concat(outs, axis=1)

    def engineer(self, data) -> Tensor:
        """Engineered features: global-mask selection of the concatenated bank outputs."""
        return mask_forward(self.global_mask, self.concatenated(data))[1]

    def forward(self, data) -> tuple[Tensor, Tensor]:
        X_hat = self.engineer(data)
        return X_hat, self._predict(X_hat)

    def temporal_forward(self, data) -> Tensor | None:
        """Concatenated outputs of the temporal branches only (None if there are none)."""
        batch = _as_batch(data, self.schema)
        outs = [b.forward(batch) for b in self.branches if b.node.accepts == ("temporal",)]
        return ad.concat(outs, axis=1) if outs else None

    # provenance ------------------------------------------------------------
    def column_descriptions(self) -> list[dict]:
        return [c for b in self.branches for c in b.describe()]

    def describe(self) -> list[dict]:
        """One entry per engineered column, in output order."""
        cols = self.column_descriptions()
        sel = self.global_mask.selection()
        ranks = np.argsort(-sel.weights, kind="stable")
        rank_of = np.empty(len(ranks), dtype=np.int64)
        rank_of[ranks] = np.arange(len(ranks))
        out, seen = [], {}
        for pos, (i, w) in enumerate(zip(sel.indices, sel.weights)):
            entry = dict(cols[i])
            slug = re.sub(r"[^0-9A-Za-z]+", "_", entry["provenance"]).strip("_")
            seen[slug] = seen.get(slug, 0) + 1
            if seen[slug] > 1:
                slug = f"{slug}__{seen[slug]}"
            entry.update(column=slug, source_index=int(i), global_weight=_fmt_w(w), rank=int(rank_of[pos]) + 1)
            out.append(entry)
        return out

    def provenance(self) -> list[str]:
        return [c["provenance"] for c in self.describe()]


class RawMLP(_Model):
    """Baseline: the same head on raw features (numeric, scaled categoricals, flattened windows)."""

    def __init__(self, schema: Schema, n_classes: int = 0, *, hidden: int = DEFAULT_HIDDEN, seed: int = 0):
        self.schema = schema
        self.task = schema.task
        self.n_classes = n_classes
        self.config = dict(hidden=hidden, seed=seed)
        width = 0
        for c in schema.columns:
            width += c.lookback if c.kind == "temporal" else 1
        self.width = width
        self.head = MLPHead(width, hidden, self.n_outputs, np.random.default_rng(seed))

    @classmethod
    def for_dataset(cls, ds: Dataset, **kw) -> "RawMLP":
        return cls(ds.schema, ds.n_classes, **kw)

    def named_parameters(self):
        return [(p.name, p) for p in self.head.params()]

    def fit_statistics(self, train: Dataset) -> None:
        pass

    def engineer(self, data) -> Tensor:
        batch = _as_batch(data, self.schema)
        return ad.constant(np.hstack([batch.numeric, batch.cat_scaled, *batch.windows]))

    def forward(self, data):
        X = self.engineer(data)
        return X, self._predict(X)

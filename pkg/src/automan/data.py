"""Schemas, CSV ingestion, deterministic splits and synthetic datasets.

CSV conventions: UTF-8, a header row, ``.`` as decimal separator, and
temporal cells holding the lookback window as ``;``-joined values (oldest
first, current value last). The schema is a JSON document::

    {"columns": [{"name": "price", "kind": "numerical"},
                 {"name": "store", "kind": "categorical"},
                 {"name": "sales", "kind": "temporal", "lookback": 8}],
     "target": "y", "task": "regression"}
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

KINDS = ("numerical", "categorical", "temporal")
TASKS = ("classification", "regression")
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    lookback: int | None = None


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    target: str
    task: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("schema column names must be unique")
        if self.target in names:
            raise DataError("target must not also be a feature column", column=self.target)
        if self.task not in TASKS:
            raise DataError(f"task must be one of {TASKS}, got {self.task!r}")
        for c in self.columns:
            if c.kind not in KINDS:
                raise DataError(f"unknown feature kind {c.kind!r}", column=c.name)
            if c.kind == "temporal" and (c.lookback is None or c.lookback < 2):
                raise DataError("temporal columns need lookback >= 2", column=c.name)

    def names(self, kind: str) -> list[str]:
        return [c.name for c in self.columns if c.kind == kind]

    def lookbacks(self) -> list[int]:
        return [c.lookback for c in self.columns if c.kind == "temporal"]

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.kind == "temporal":
                entry["lookback"] = c.lookback
            cols.append(entry)
        return {"columns": cols, "target": self.target, "task": self.task}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            cols = tuple(Column(c["name"], c["kind"], c.get("lookback")) for c in d["columns"])
            return cls(cols, d["target"], d["task"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema: missing field {exc}") from None

    @classmethod
    def load(cls, path) -> "Schema":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise DataError(f"cannot read schema file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"schema file is not valid JSON: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Dataset:
    """Column blocks for one table; every block has one row per sample.

    ``cat_codes`` uses -1 for levels absent from the training code tables.
    ``y`` holds class indices (classification) or reals (regression).
    """

    schema: Schema
    numeric: np.ndarray
    cat_raw: np.ndarray
    cat_codes: np.ndarray
    cat_levels: list[list[str]]
    windows: list[np.ndarray]
    y: np.ndarray
    classes: list[str] | None = None
    split: np.ndarray | None = None
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.y)
        if self.row_ids is None:
            self.row_ids = np.arange(n)
        blocks = [self.numeric, self.cat_raw, self.cat_codes, *self.windows]
        if self.split is not None:
            blocks.append(self.split)
        if any(len(b) != n for b in blocks):
            raise DataError("row counts differ between dataset blocks")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_classes(self) -> int:
        return len(self.classes) if self.classes is not None else 0

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            numeric=self.numeric[idx],
            cat_raw=self.cat_raw[idx],
            cat_codes=self.cat_codes[idx],
            windows=[w[idx] for w in self.windows],
            y=self.y[idx],
            split=None if self.split is None else self.split[idx],
            row_ids=self.row_ids[idx],
        )

    def split_indices(self, name: str) -> np.ndarray:
        if self.split is None:
            return np.arange(len(self)) if name == "train" else np.arange(0)
        return np.flatnonzero(self.split == name)

    def part(self, name: str) -> "Dataset":
        return self.rows(self.split_indices(name))

    def cat_scaled(self) -> np.ndarray:
        """Ordinal codes scaled to [0, 1]; unseen levels map to 0."""
        out = np.zeros(self.cat_codes.shape)
        for c, levels in enumerate(self.cat_levels):
            span = max(len(levels) - 1, 1)
            out[:, c] = np.where(self.cat_codes[:, c] >= 0, self.cat_codes[:, c] / span, 0.0)
        return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"non-numeric value {text!r}", row=row, column=column) from None
    if not np.isfinite(v):
        raise DataError(f"non-finite value {text!r}", row=row, column=column)
    return v


def _sort_labels(labels: Iterable[str]) -> list[str]:
    labels = sorted(set(labels))
    try:
        return sorted(labels, key=float)
    except ValueError:
        return labels


def load_csv(
    path,
    schema: Schema,
    code_tables: Sequence[Sequence[str]] | None = None,
    classes: Sequence[str] | None = None,
    require_target: bool = True,
) -> Dataset:
    """Parse a CSV file against ``schema``.

    Without ``code_tables`` categorical levels are coded by first appearance
    in the file (the whole file counts as the training split until
    :func:`split` re-codes on the training rows). Row numbers in errors are
    1-based data rows (the header is row 0).
    """
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open data file: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("data file is empty (no header row)") from None
        pos = {name: i for i, name in enumerate(header)}
        for c in schema.columns:
            if c.name not in pos:
                raise DataError("column missing from header", column=c.name)
        has_target = schema.target in pos
        if require_target and not has_target:
            raise DataError("target column missing from header", column=schema.target)

        num_cols = [c for c in schema.columns if c.kind == "numerical"]
        cat_cols = [c for c in schema.columns if c.kind == "categorical"]
        tmp_cols = [c for c in schema.columns if c.kind == "temporal"]
        numeric, cat_raw, labels = [], [], []
        windows: list[list[list[float]]] = [[] for _ in tmp_cols]
        for r, rec in enumerate(reader, start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) != len(header):
                raise DataError(f"expected {len(header)} fields, found {len(rec)}", row=r)
            numeric.append([_parse_float(rec[pos[c.name]], r, c.name) for c in num_cols])
            cats = []
            for c in cat_cols:
                v = rec[pos[c.name]]
                if v == "":
                    raise DataError("missing categorical value", row=r, column=c.name)
                cats.append(v)
            cat_raw.append(cats)
            for t, c in enumerate(tmp_cols):
                cell = rec[pos[c.name]]
                parts = cell.split(";") if cell else []
                if len(parts) != c.lookback:
                    raise DataError(f"temporal cell has {len(parts)} steps, expected {c.lookback}", row=r, column=c.name)
                windows[t].append([_parse_float(p, r, c.name) for p in parts])
            if has_target:
                val = rec[pos[schema.target]]
                if schema.task == "regression":
                    labels.append(_parse_float(val, r, schema.target))
                else:
                    if val == "":
                        raise DataError("missing label", row=r, column=schema.target)
                    labels.append(val)

    n = len(numeric)
    numeric_arr = np.array(numeric, dtype=np.float64).reshape(n, len(num_cols))
    cat_arr = np.array(cat_raw, dtype=object).reshape(n, len(cat_cols))
    win_arrs = [np.array(w, dtype=np.float64).reshape(n, c.lookback) for w, c in zip(windows, tmp_cols)]

    cls_list = None
    if schema.task == "classification":
        cls_list = list(classes) if classes is not None else _sort_labels(labels)
        lookup = {c: i for i, c in enumerate(cls_list)}
        y = np.empty(n, dtype=np.int64)
        for i, lab in enumerate(labels):
            if lab not in lookup:
                raise DataError(f"label {lab!r} not among known classes", row=i + 1, column=schema.target)
            y[i] = lookup[lab]
        if not has_target:
            y = np.full(n, -1, dtype=np.int64)
    else:
        y = np.array(labels, dtype=np.float64) if has_target else np.full(n, np.nan)

    if code_tables is None:
        code_tables = [_first_appearance(cat_arr[:, c]) for c in range(cat_arr.shape[1])]
    codes = encode_categories(cat_arr, code_tables)
    return Dataset(schema, numeric_arr, cat_arr, codes, [list(t) for t in code_tables], win_arrs, y, cls_list)


def _first_appearance(values) -> list[str]:
    return list(dict.fromkeys(values.tolist()))


def encode_categories(cat_raw: np.ndarray, code_tables) -> np.ndarray:
    codes = np.full(cat_raw.shape, -1, dtype=np.int64)
    for c, levels in enumerate(code_tables):
        lookup = {v: i for i, v in enumerate(levels)}
        codes[:, c] = [lookup.get(v, -1) for v in cat_raw[:, c]]
    return codes


def write_csv(ds: Dataset, path) -> None:
    """Inverse of :func:`load_csv`; floats are written with full precision."""
    schema = ds.schema
    num_i = cat_i = tmp_i = 0
    getters = []
    for c in schema.columns:
        if c.kind == "numerical":
            getters.append(lambda i, j=num_i: repr(float(ds.numeric[i, j])))
            num_i += 1
        elif c.kind == "categorical":
            getters.append(lambda i, j=cat_i: str(ds.cat_raw[i, j]))
            cat_i += 1
        else:
            getters.append(lambda i, j=tmp_i: ";".join(repr(float(v)) for v in ds.windows[j][i]))
            tmp_i += 1
    if schema.task == "classification":
        target = lambda i: ds.classes[int(ds.y[i])]  # noqa: E731
    else:
        target = lambda i: repr(float(ds.y[i]))  # noqa: E731
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c.name for c in schema.columns] + [schema.target])
        for i in range(len(ds)):
            w.writerow([g(i) for g in getters] + [target(i)])


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def _apportion(total: int, sizes: np.ndarray, frac: float) -> np.ndarray:
    """Largest-remainder allocation of ``total`` across groups proportional to ``sizes``."""
    if total == 0 or sizes.sum() == 0:
        return np.zeros(len(sizes), dtype=np.int64)
    ideal = sizes * frac
    base = np.minimum(np.floor(ideal).astype(np.int64), sizes)
    rem = total - base.sum()
    order = np.argsort(-(ideal - base), kind="stable")
    for g in order:
        if rem <= 0:
            break
        if base[g] < sizes[g]:
            base[g] += 1
            rem -= 1
    return base


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0, stratify: bool | None = None) -> Dataset:
    """Tag rows train/validation/test with a seeded shuffle.

    Classification data is stratified by class unless ``stratify=False``.
    Categorical code tables are rebuilt from the training rows.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,):
        raise ValueError("fractions must be (train, validation, test)")
    if np.any(fr < 0) or fr[0] <= 0 or not np.isclose(fr.sum(), 1.0):
        raise ValueError(f"fractions must be non-negative, train > 0, and sum to 1; got {tuple(fr)}")
    n = len(ds)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    n_val = min(n_val, n - n_train)
    tags = np.empty(n, dtype=object)

    if stratify is None:
        stratify = ds.schema.task == "classification"
    if stratify and ds.schema.task == "classification":
        groups = [perm[ds.y[perm] == c] for c in range(ds.n_classes)]
        sizes = np.array([len(g) for g in groups])
        tr = _apportion(n_train, sizes, fr[0])
        rest = sizes - tr
        va = _apportion(n_val, rest, fr[1] / max(fr[1] + fr[2], 1e-12)) if n_val else np.zeros_like(rest)
        for c, g in enumerate(groups):
            if sizes[c] and tr[c] == 0:
                raise DataError(f"class {ds.classes[c]!r} has no rows in the training split")
            tags[g[: tr[c]]] = "train"
            tags[g[tr[c] : tr[c] + va[c]]] = "validation"
            tags[g[tr[c] + va[c] :]] = "test"
    else:
        tags[perm[:n_train]] = "train"
        tags[perm[n_train : n_train + n_val]] = "validation"
        tags[perm[n_train + n_val :]] = "test"

    out = replace(ds, split=tags.astype(str))
    train_rows = np.flatnonzero(out.split == "train")
    tables = [_first_appearance(ds.cat_raw[train_rows, c]) for c in range(ds.cat_raw.shape[1])]
    out.cat_levels = tables
    out.cat_codes = encode_categories(ds.cat_raw, tables)
    return out


def assign_split(ds: Dataset, tags) -> Dataset:
    """Attach explicit split tags and re-code categoricals on the training rows."""
    tags = np.asarray(tags).astype(str)
    out = replace(ds, split=tags)
    train_rows = np.flatnonzero(tags == "train")
    tables = [_first_appearance(ds.cat_raw[train_rows, c]) for c in range(ds.cat_raw.shape[1])]
    out.cat_levels = tables
    out.cat_codes = encode_categories(ds.cat_raw, tables)
    return out


# ---------------------------------------------------------------------------
# fitted statistics
# ---------------------------------------------------------------------------


def fit_statistics(ds: Dataset, bank) -> None:
    """Fit every non-learned statistic in ``bank`` on the training rows only.

    ``bank`` is anything with a ``fit_statistics(train_part)`` method
    (a pipeline model) or an iterable of transform nodes.
    """
    train = ds.part("train")
    if len(train) == 0:
        raise DataError("training split is empty; cannot fit statistics")
    if hasattr(bank, "fit_statistics"):
        bank.fit_statistics(train)
        return
    for node in bank:
        if node.kind == "group_by":
            node.fit_groups(train.cat_codes, train.numeric, [len(t) for t in train.cat_levels])
        else:
            node.fit(train.numeric)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

GENERATORS = ("product+log", "lag2", "scaling")


def synthesize(
    generator: str, n: int, d: int = 6, seed: int = 0, noise: bool = True, lookback: int = 8
) -> Dataset:
    """Deterministic synthetic datasets.

    ``product+log``: standard normal x1..xd, y = x2*x3 + ln|x1| + N(0, 0.01^2).
    ``lag2``: one temporal feature ``x`` cut from a white-noise series into
    windows of length ``lookback``; y is the value two steps before the
    current one (window position L-3). ``noise`` adds N(0, 0.01^2) to y.
    ``scaling``: standard normal features with an unrelated normal target.
    """
    rng = np.random.default_rng(seed)
    empty_cat = np.empty((n, 0), dtype=object)
    empty_codes = np.empty((n, 0), dtype=np.int64)
    if generator == "product+log":
        if d < 3:
            raise ValueError("product+log needs d >= 3")
        X = rng.standard_normal((n, d))
        y = X[:, 1] * X[:, 2] + np.log(np.abs(X[:, 0]))
        if noise:
            y = y + 0.01 * rng.standard_normal(n)
        schema = Schema(tuple(Column(f"x{j + 1}", "numerical") for j in range(d)), "y", "regression")
        return Dataset(schema, X, empty_cat, empty_codes, [], [], y)
    if generator == "lag2":
        L = lookback
        series = rng.standard_normal(n + L - 1)
        windows = np.lib.stride_tricks.sliding_window_view(series, L).copy()
        y = windows[:, L - 3].copy()
        if noise:
            y = y + 0.01 * rng.standard_normal(n)
        schema = Schema((Column("x", "temporal", L),), "y", "regression")
        return Dataset(schema, np.empty((n, 0)), empty_cat, empty_codes, [], [windows], y)
    if generator == "scaling":
        X = rng.standard_normal((n, d))
        y = rng.standard_normal(n)
        schema = Schema(tuple(Column(f"x{j + 1}", "numerical") for j in range(d)), "y", "regression")
        return Dataset(schema, X, empty_cat, empty_codes, [], [], y)
    raise ValueError(f"unknown generator {generator!r}; choose from {GENERATORS}")

"""Candidate transform functions and their learnable parameters.

Each transform comes in two layers: a functional op acting on autodiff
tensors (``polynomial``, ``logarithm``, ...) and a node class that owns the
learnable parameters, any fitted statistics, and the provenance formatter.
Masked transforms receive the h weighted columns picked by their local
mask; window transforms receive a whole (samples, L) lookback window.
"""
from __future__ import annotations

import numpy as np

from . import _kernels as K
from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError

EPS_POLY = 1e-8
EPS_LOG = 1e-6
EPS_SCALE = 1e-6
# softplus(SOFTPLUS_ONE) == 1
SOFTPLUS_ONE = float(np.log(np.e - 1.0))
DIFF_OFFSETS = (1, 2, 7)


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------


def degree_from_raw(raw):
    """Map an unconstrained value onto a polynomial degree in (0.5, 3.0)."""
    return 0.5 + 2.5 * ad.sigmoid(raw)


def polynomial(x: Tensor, coef: Tensor, degree_raw: Tensor) -> Tensor:
    base = ad.absolute(x + EPS_POLY)
    return coef * ad.sign(x) * ad.power(base, degree_from_raw(degree_raw))


def logarithm(x: Tensor) -> Tensor:
    return ad.log(ad.absolute(x) + EPS_LOG)


def custom_z_scale(x: Tensor, scale_raw: Tensor, shift: Tensor) -> Tensor:
    return (x - shift) / (ad.softplus(scale_raw) + EPS_SCALE)


def additive_aggregation(x: Tensor) -> Tensor:
    return ad.reduce_sum(x, axis=1, keepdims=True)


def multiplicative_aggregation(x: Tensor) -> Tensor:
    return ad.reduce_prod(x, axis=1, keepdims=True)


def gaussian_transform(x: Tensor, mean: Tensor, std_raw: Tensor) -> Tensor:
    std = ad.softplus(std_raw) + EPS_SCALE
    return ad.exp(-((x - mean) ** 2) / (2.0 * std**2))


def fit_quantile_cuts(X) -> np.ndarray:
    """Quartile cut points (25/50/75th, linear interpolation), one row per column."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise DataError("cannot fit quantile cut points on an empty column")
    return np.ascontiguousarray(np.percentile(X, [25.0, 50.0, 75.0], axis=0).T)


def quantile_transform(X, cuts) -> np.ndarray:
    """Bucket each column against its cut points and rescale to {0, 1/3, 2/3, 1}."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    return K.bucketize(X, np.ascontiguousarray(cuts)) / 3.0


def fit_group_means(codes, values, n_levels: int) -> np.ndarray:
    """Per-level means of each value column; the extra last row is the global mean."""
    codes = np.asarray(codes, dtype=np.int64)
    values = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    if values.ndim == 1:
        values = values[:, None]
    if codes.size == 0:
        raise DataError("cannot fit group means on an empty training split")
    if codes.min() < 0 or codes.max() >= n_levels:
        raise DataError("group codes must be dense training codes in [0, n_levels)")
    return K.group_mean_table(codes, values, n_levels)


def group_by(codes, table) -> np.ndarray:
    """Look up per-level means; codes outside the table (unseen, -1) get the global mean."""
    codes = np.asarray(codes, dtype=np.int64)
    n_levels = table.shape[0] - 1
    rows = np.where((codes >= 0) & (codes < n_levels), codes, n_levels)
    return table[rows]


def identity(x: Tensor) -> Tensor:
    return x


def temporal_aggregation(w: Tensor) -> Tensor:
    return ad.reduce_sum(w, axis=1, keepdims=True)


def temporal_standard_normalization(w: Tensor) -> Tensor:
    return ad.std_normalize(w)


def temporal_differencing(w: Tensor) -> Tensor:
    L = w.shape[1]
    prev = np.concatenate([[0], np.arange(L - 1)])
    return w - ad.take(w, prev, axis=1)


def temporal_lag(w: Tensor) -> Tensor:
    return w


def relative_temporal_mean(w: Tensor) -> Tensor:
    return ad.reduce_mean(ad.std_normalize(w), axis=1, keepdims=True)


def temporal_difference_k(w: Tensor, k: int) -> Tensor:
    L = w.shape[1]
    if not 1 <= k < L:
        raise ValueError(f"difference offset {k} needs a window longer than {k}, got L={L}")
    return ad.take(w, [L - 1], axis=1) - ad.take(w, [L - 1 - k], axis=1)


def temporal_mean(w: Tensor) -> Tensor:
    return ad.reduce_mean(w, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------


def fmt_const(v) -> str:
    """Render a constant with 4 significant digits (integers verbatim)."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.4g}"


def render(name: str, inputs, constants=()) -> str:
    parts = [str(s) for s in inputs] + [fmt_const(c) for c in constants]
    return f"{name}({', '.join(parts)})"


class TransformNode:
    """One transform with its parameters and (optional) fitted statistics.

    ``masked`` nodes take the h columns chosen by a local mask; the
    others take a full lookback window. ``accepts`` lists the feature kinds
    the node may be fed.
    """

    name = "Transform"
    kind = "transform"
    accepts: tuple[str, ...] = ("numerical",)
    masked = True
    learnable: tuple[str, ...] = ()

    def __init__(self, h: int):
        if h < 1:
            raise ValueError(f"{self.name} needs arity >= 1, got {h}")
        self.h = h
        self.params: dict[str, Tensor] = {}

    def out_width(self) -> int:
        return self.h

    def encode(self, X: np.ndarray) -> np.ndarray:
        """Column-wise encoding applied before the mask picks columns."""
        return X

    def fit(self, X_train: np.ndarray) -> None:
        pass

    @property
    def fitted(self) -> bool:
        return True

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def constants(self, j: int) -> list[tuple[str, float]]:
        """Learned or fitted constants behind output column ``j``."""
        return []

    def provenance(self, inputs, j: int = 0) -> str:
        return render(self.name, inputs, [v for _, v in self.constants(j)])

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            v.data[...] = state[k]

    def _param(self, key: str, value) -> Tensor:
        t = ad.parameter(value, name=f"{self.name}.{key}")
        self.params[key] = t
        return t


class Polynomial(TransformNode):
    name = "Polynomial"
    kind = "polynomial"
    learnable = ("coef", "degree")

    def __init__(self, h):
        super().__init__(h)
        self._param("coef", np.ones(h))
        self._param("degree", np.zeros(h))

    def forward(self, x):
        return polynomial(x, self.params["coef"], self.params["degree"])

    def constants(self, j):
        raw = self.params["degree"].data[j]
        return [("coef", self.params["coef"].data[j]), ("degree", 0.5 + 2.5 / (1.0 + np.exp(-raw)))]


class Logarithm(TransformNode):
    name = "Logarithm"
    kind = "logarithm"

    def forward(self, x):
        return logarithm(x)


class CustomZScale(TransformNode):
    name = "CustomZScale"
    kind = "custom_z_scale"
    learnable = ("scale", "shift")

    def __init__(self, h):
        super().__init__(h)
        self._param("scale", np.full(h, SOFTPLUS_ONE))
        self._param("shift", np.zeros(h))

    def forward(self, x):
        return custom_z_scale(x, self.params["scale"], self.params["shift"])

    def constants(self, j):
        divisor = np.logaddexp(0.0, self.params["scale"].data[j]) + EPS_SCALE
        return [("shift", self.params["shift"].data[j]), ("divisor", divisor)]


class AdditiveAggregation(TransformNode):
    name = "AdditiveAggregation"
    kind = "additive_aggregation"

    def out_width(self):
        return 1

    def forward(self, x):
        return additive_aggregation(x)


class MultiplicativeAggregation(TransformNode):
    name = "MultiplicativeAggregation"
    kind = "multiplicative_aggregation"

    def out_width(self):
        return 1

    def forward(self, x):
        return multiplicative_aggregation(x)


class GaussianTransform(TransformNode):
    name = "Gaussian"
    kind = "gaussian"
    learnable = ("mean", "std")

    def __init__(self, h):
        super().__init__(h)
        self._param("mean", np.zeros(h))
        self._param("std", np.full(h, SOFTPLUS_ONE))

    def forward(self, x):
        return gaussian_transform(x, self.params["mean"], self.params["std"])

    def constants(self, j):
        std = np.logaddexp(0.0, self.params["std"].data[j]) + EPS_SCALE
        return [("mean", self.params["mean"].data[j]), ("std", std)]


class QuantileTransform(TransformNode):
    """Quartile bucketing; zero gradient through the buckets themselves.

    The mask sees the bucket-encoded columns, so the trainable path is the
    mask weight applied to the chosen column's bucket value.
    """

    name = "QuantileTransform"
    kind = "quantile"

    def __init__(self, h):
        super().__init__(h)
        self.cuts: np.ndarray | None = None

    @property
    def fitted(self):
        return self.cuts is not None

    def fit(self, X_train):
        self.cuts = fit_quantile_cuts(X_train)

    def encode(self, X):
        if self.cuts is None:
            raise RuntimeError("QuantileTransform used before fit")
        return quantile_transform(X, self.cuts)

    def forward(self, x):
        return x

    def state(self):
        return {"cuts": self.cuts} if self.cuts is not None else {}

    def load_state(self, state):
        self.cuts = np.array(state["cuts"], dtype=np.float64)


class GroupBy(TransformNode):
    """Per-category training means of one numeric column.

    Both the grouping key (among categorical columns) and the aggregated
    value column are chosen by their own width-1 masks; see
    :class:`automan.pipeline.GroupByBranch`.
    """

    name = "GroupBy"
    kind = "group_by"
    accepts = ("numerical", "categorical")

    def __init__(self, h: int = 1):
        super().__init__(1)
        self.tables: list[np.ndarray] | None = None

    def out_width(self):
        return 1

    @property
    def fitted(self):
        return self.tables is not None

    def fit_groups(self, codes_train: np.ndarray, values_train: np.ndarray, n_levels) -> None:
        self.tables = [
            fit_group_means(codes_train[:, c], values_train, n_levels[c]) for c in range(codes_train.shape[1])
        ]

    def candidate_matrix(self, key: int, codes: np.ndarray) -> np.ndarray:
        if self.tables is None:
            raise RuntimeError("GroupBy used before fit")
        return group_by(codes[:, key], self.tables[key])

    def forward(self, x):
        return x

    def state(self):
        return {f"table{c}": t for c, t in enumerate(self.tables or [])}

    def load_state(self, state):
        n = len([k for k in state if k.startswith("table")])
        self.tables = [np.array(state[f"table{c}"], dtype=np.float64) for c in range(n)]


class Identity(TransformNode):
    name = "Identity"
    kind = "identity"
    accepts = ("numerical", "categorical", "temporal")

    def forward(self, x):
        return identity(x)


# temporal -------------------------------------------------------------------


class TemporalAggregation(TransformNode):
    name = "TemporalAggregation"
    kind = "temporal_aggregation"
    accepts = ("temporal",)

    def out_width(self):
        return 1

    def forward(self, w):
        return temporal_aggregation(w)


class TemporalLag(TransformNode):
    name = "TemporalLag"
    kind = "temporal_lag"
    accepts = ("temporal",)

    def __init__(self, h: int = 1):
        super().__init__(1)

    def forward(self, w):
        return temporal_lag(w)


class TemporalStandardNormalization(TransformNode):
    name = "TemporalStandardNormalization"
    kind = "temporal_standard_normalization"
    accepts = ("temporal",)
    masked = False

    def forward(self, w):
        return temporal_standard_normalization(w)


class TemporalDifferencing(TransformNode):
    name = "TemporalDifferencing"
    kind = "temporal_differencing"
    accepts = ("temporal",)
    masked = False

    def forward(self, w):
        return temporal_differencing(w)


class RelativeTemporalMean(TransformNode):
    name = "RelativeTemporalMean"
    kind = "relative_temporal_mean"
    accepts = ("temporal",)
    masked = False

    def out_width(self):
        return 1

    def forward(self, w):
        return relative_temporal_mean(w)


class TemporalDifference(TransformNode):
    name = "TemporalDifference"
    kind = "temporal_difference"
    accepts = ("temporal",)
    masked = False

    def __init__(self, h: int, offset: int):
        if not 1 <= offset < h:
            raise ValueError(f"offset {offset} not usable with window length {h}")
        super().__init__(h)
        self.offset = offset

    def out_width(self):
        return 1

    def forward(self, w):
        return temporal_difference_k(w, self.offset)

    def constants(self, j):
        return [("offset", self.offset)]


class TemporalMean(TransformNode):
    name = "TemporalMean"
    kind = "temporal_mean"
    accepts = ("temporal",)
    masked = False

    def out_width(self):
        return 1

    def forward(self, w):
        return temporal_mean(w)


NUMERIC_KINDS = (
    "polynomial",
    "logarithm",
    "custom_z_scale",
    "additive_aggregation",
    "multiplicative_aggregation",
    "gaussian",
    "quantile",
    "group_by",
    "identity",
)
TEMPORAL_KINDS = (
    "temporal_aggregation",
    "temporal_standard_normalization",
    "temporal_differencing",
    "temporal_lag",
    "relative_temporal_mean",
    "temporal_difference",
    "temporal_mean",
)
ALL_KINDS = NUMERIC_KINDS + TEMPORAL_KINDS

NODE_TYPES: dict[str, type[TransformNode]] = {
    cls.kind: cls
    for cls in (
        Polynomial,
        Logarithm,
        CustomZScale,
        AdditiveAggregation,
        MultiplicativeAggregation,
        GaussianTransform,
        QuantileTransform,
        GroupBy,
        Identity,
        TemporalAggregation,
        TemporalLag,
        TemporalStandardNormalization,
        TemporalDifferencing,
        RelativeTemporalMean,
        TemporalDifference,
        TemporalMean,
    )
}

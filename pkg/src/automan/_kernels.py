"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The active backend is chosen once at import from ``AUTOMAN_NUMBA``
("1"/unset: numba when importable, "0": numpy). Tests and the benchmark
switch it at runtime with :func:`set_backend` / :func:`use_backend`.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

STD_EPS = 1e-6


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_row_prod(x):
    n, h = x.shape
    ones = np.ones((n, 1))
    prefix = np.cumprod(np.hstack([ones, x[:, :-1]]), axis=1)
    suffix = np.cumprod(np.hstack([ones, x[:, :0:-1]]), axis=1)[:, ::-1]
    loo = prefix * suffix
    prod = loo[:, 0] * x[:, 0] if h else np.ones(n)
    return prod, loo


def _np_bucketize(x, cuts):
    out = np.empty(x.shape, dtype=np.int64)
    for j in range(x.shape[1]):
        out[:, j] = np.searchsorted(cuts[j], x[:, j], side="left")
    return out


def _np_group_mean_table(codes, values, n_groups):
    d = values.shape[1]
    table = np.zeros((n_groups + 1, d))
    counts = np.bincount(codes, minlength=n_groups).astype(np.float64)
    for j in range(d):
        sums = np.bincount(codes, weights=values[:, j], minlength=n_groups)
        table[:n_groups, j] = np.divide(sums, counts, out=np.zeros(n_groups), where=counts > 0)
    table[n_groups] = values.mean(axis=0) if len(values) else 0.0
    return table


def _np_std_norm_fwd(w):
    centered = w - w.mean(axis=1, keepdims=True)
    std = np.sqrt((centered**2).mean(axis=1))
    return centered / (std + STD_EPS)[:, None], std


def _np_std_norm_bwd(w, std, g):
    L = w.shape[1]
    centered = w - w.mean(axis=1, keepdims=True)
    denom = std + STD_EPS
    gc = g - g.mean(axis=1, keepdims=True)
    dot = (g * centered).sum(axis=1)
    safe = np.where(std > 0, std, 1.0)
    coef = np.where(std > 0, dot / (denom**2 * L * safe), 0.0)
    return gc / denom[:, None] - coef[:, None] * centered


def _np_gauss_sum_eval(points, c, mu, s):
    d2 = ((points[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2.0 * s[None, :] ** 2)) @ c


def _np_gauss_sum_loss_grad(points, target, c, mu, log_s):
    s = np.exp(log_s)
    diff = points[:, None, :] - mu[None, :, :]
    d2 = (diff**2).sum(axis=2)
    phi = np.exp(-d2 / (2.0 * s[None, :] ** 2))
    resid = phi @ c - target
    G = len(target)
    loss = float((resid**2).mean())
    r2 = (2.0 / G) * resid
    gc = phi.T @ r2
    weighted = phi * (r2[:, None] * c[None, :])
    gmu = np.einsum("gk,gkn->kn", weighted, diff) / (s[:, None] ** 2)
    glog_s = (weighted * d2).sum(axis=0) / s**2
    return loss, gc, gmu, glog_s


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_row_prod(x):
        n, h = x.shape
        prod = np.ones(n)
        loo = np.ones((n, h))
        for i in range(n):
            acc = 1.0
            for j in range(h):
                loo[i, j] = acc
                acc *= x[i, j]
            prod[i] = acc
            acc = 1.0
            for j in range(h - 1, -1, -1):
                loo[i, j] *= acc
                acc *= x[i, j]
        return prod, loo

    @njit(cache=True)
    def _nb_bucketize(x, cuts):
        n, d = x.shape
        out = np.zeros((n, d), dtype=np.int64)
        for i in range(n):
            for j in range(d):
                b = 0
                for q in range(cuts.shape[1]):
                    if cuts[j, q] < x[i, j]:
                        b += 1
                out[i, j] = b
        return out

    @njit(cache=True)
    def _nb_group_mean_table(codes, values, n_groups):
        n, d = values.shape
        table = np.zeros((n_groups + 1, d))
        counts = np.zeros(n_groups)
        for i in range(n):
            counts[codes[i]] += 1.0
            for j in range(d):
                table[codes[i], j] += values[i, j]
        for g in range(n_groups):
            if counts[g] > 0:
                for j in range(d):
                    table[g, j] /= counts[g]
        if n > 0:
            for j in range(d):
                acc = 0.0
                for i in range(n):
                    acc += values[i, j]
                table[n_groups, j] = acc / n
        return table

    @njit(cache=True)
    def _nb_std_norm_fwd(w):
        n, L = w.shape
        z = np.empty((n, L))
        std = np.empty(n)
        for i in range(n):
            m = 0.0
            for t in range(L):
                m += w[i, t]
            m /= L
            v = 0.0
            for t in range(L):
                v += (w[i, t] - m) ** 2
            std[i] = np.sqrt(v / L)
            for t in range(L):
                z[i, t] = (w[i, t] - m) / (std[i] + STD_EPS)
        return z, std

    @njit(cache=True)
    def _nb_std_norm_bwd(w, std, g):
        n, L = w.shape
        out = np.empty((n, L))
        for i in range(n):
            m = 0.0
            gm = 0.0
            for t in range(L):
                m += w[i, t]
                gm += g[i, t]
            m /= L
            gm /= L
            denom = std[i] + STD_EPS
            coef = 0.0
            if std[i] > 0:
                dot = 0.0
                for t in range(L):
                    dot += g[i, t] * (w[i, t] - m)
                coef = dot / (denom * denom * L * std[i])
            for t in range(L):
                out[i, t] = (g[i, t] - gm) / denom - coef * (w[i, t] - m)
        return out

    @njit(cache=True)
    def _nb_gauss_sum_eval(points, c, mu, s):
        G, dim = points.shape
        K = c.shape[0]
        out = np.zeros(G)
        for g in range(G):
            acc = 0.0
            for k in range(K):
                d2 = 0.0
                for a in range(dim):
                    d2 += (points[g, a] - mu[k, a]) ** 2
                acc += c[k] * np.exp(-d2 / (2.0 * s[k] * s[k]))
            out[g] = acc
        return out

    @njit(cache=True)
    def _nb_gauss_sum_loss_grad(points, target, c, mu, log_s):
        G, dim = points.shape
        K = c.shape[0]
        s = np.exp(log_s)
        phi = np.empty(K)
        d2 = np.empty(K)
        gc = np.zeros(K)
        gmu = np.zeros((K, dim))
        glog_s = np.zeros(K)
        loss = 0.0
        for g in range(G):
            pred = 0.0
            for k in range(K):
                acc = 0.0
                for a in range(dim):
                    acc += (points[g, a] - mu[k, a]) ** 2
                d2[k] = acc
                phi[k] = np.exp(-acc / (2.0 * s[k] * s[k]))
                pred += c[k] * phi[k]
            resid = pred - target[g]
            loss += resid * resid
            r2 = 2.0 * resid / G
            for k in range(K):
                gc[k] += r2 * phi[k]
                wk = r2 * c[k] * phi[k]
                inv = 1.0 / (s[k] * s[k])
                for a in range(dim):
                    gmu[k, a] += wk * (points[g, a] - mu[k, a]) * inv
                glog_s[k] += wk * d2[k] * inv
        return loss / G, gc, gmu, glog_s


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_NAMES = (
    "row_prod",
    "bucketize",
    "group_mean_table",
    "std_norm_fwd",
    "std_norm_bwd",
    "gauss_sum_eval",
    "gauss_sum_loss_grad",
)

_backend = "numpy"


def available_backends() -> list[str]:
    return ["numpy", "numba"] if HAS_NUMBA else ["numpy"]


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    prefix = "_nb_" if name == "numba" else "_np_"
    g = globals()
    for fn in _NAMES:
        g[fn] = g[prefix + fn]
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _default_backend() -> str:
    flag = os.environ.get("AUTOMAN_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off") or not HAS_NUMBA:
        return "numpy"
    return "numba"


set_backend(_default_backend())

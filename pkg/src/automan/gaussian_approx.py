"""Finite Gaussian sums as uniform approximators on a box [-N, N]^n (n <= 2).

A component is ``c * exp(-|x - mu|^2 / (2 s^2))``. Fitting minimises the
mean squared error on a grid with Adam over (c, mu, log s), starting from
seeded centres, widths ``2N / K`` and least-squares coefficients. The
uniform error is then measured on a (possibly different) grid.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as Kn
from .errors import NumericError

TARGETS: dict[str, tuple[int, Callable[[np.ndarray], np.ndarray]]] = {
    "sin": (1, lambda x: np.sin(x[:, 0])),
    "abs_smooth": (1, lambda x: np.sqrt(x[:, 0] ** 2 + 0.01)),
    "step_smooth": (1, lambda x: 0.5 * (1.0 + np.tanh(4.0 * x[:, 0]))),
    "ripple2d": (2, lambda x: np.cos(np.hypot(x[:, 0], x[:, 1]))),
    "gaussian": (1, lambda x: 0.8 * np.exp(-((x[:, 0] - 0.5) ** 2) / (2 * 0.7**2))),
}
CORPUS = ("sin", "abs_smooth", "step_smooth", "ripple2d")


@dataclass
class GaussianSum:
    coef: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        self.coef = np.ascontiguousarray(self.coef, dtype=np.float64).reshape(-1)
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        if self.centers.ndim == 1:
            self.centers = self.centers[:, None].copy()
        self.widths = np.ascontiguousarray(self.widths, dtype=np.float64).reshape(-1)
        if not (len(self.coef) == len(self.centers) == len(self.widths)):
            raise ValueError("coef, centers and widths need one entry per component")
        if np.any(self.widths <= 0):
            raise ValueError("Gaussian widths must be strictly positive")

    @property
    def n_components(self) -> int:
        return len(self.coef)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def __call__(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return Kn.gauss_sum_eval(pts, self.coef, self.centers, self.widths)

    def add_component(self, c: float, center, width: float) -> "GaussianSum":
        return GaussianSum(
            np.append(self.coef, c),
            np.vstack([self.centers, np.reshape(center, (1, self.dim))]),
            np.append(self.widths, width),
        )

    def __mul__(self, other: "GaussianSum") -> "GaussianSum":
        """Pointwise product, expanded component by component in closed form."""
        coef, centers, widths = [], [], []
        for ci, mi, si in zip(self.coef, self.centers, self.widths):
            for cj, mj, sj in zip(other.coef, other.centers, other.widths):
                scale, mu, s = gaussian_product(mi, si, mj, sj)
                coef.append(ci * cj * scale)
                centers.append(mu)
                widths.append(s)
        return GaussianSum(np.array(coef), np.array(centers), np.array(widths))


def gaussian(points, center, width) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    center = np.reshape(np.asarray(center, dtype=np.float64), (1, -1))
    if pts.shape[1] != center.shape[1] and pts.shape[0] == 1:
        pts = pts.T
    return np.exp(-((pts - center) ** 2).sum(axis=1) / (2.0 * width**2))


def gaussian_product(mu1, s1, mu2, s2):
    """exp(-|x-mu1|^2/2s1^2) * exp(-|x-mu2|^2/2s2^2) == scale * exp(-|x-mu|^2/2s^2)."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    a1, a2 = 1.0 / s1**2, 1.0 / s2**2
    a = a1 + a2
    mu = (a1 * mu1 + a2 * mu2) / a
    scale = float(np.exp(-a1 * a2 * np.sum((mu1 - mu2) ** 2) / (2.0 * a)))
    return scale, mu, float(1.0 / np.sqrt(a))


def _as_points(points, dim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None] if dim == 1 else pts[None, :]
    return np.ascontiguousarray(pts)


def grid(N: float, resolution: int, dim: int) -> np.ndarray:
    axis = np.linspace(-N, N, resolution)
    if dim == 1:
        return axis[:, None].copy()
    if dim == 2:
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])
    raise ValueError("only 1-D and 2-D domains are supported")


def _target(g) -> tuple[int, Callable]:
    if isinstance(g, str):
        try:
            return TARGETS[g]
        except KeyError:
            raise ValueError(f"unknown target {g!r}; choose from {sorted(TARGETS)}") from None
    return g


def fit_gaussian_sum(
    g,
    K: int,
    N: float = 3.0,
    seed: int = 0,
    resolution: int = 256,
    steps: int = 3000,
    lr: float = 0.01,
    dim: int | None = None,
) -> GaussianSum:
    """Fit ``K`` Gaussians to ``g`` on [-N, N]^dim by gradient descent on the grid MSE.

    ``g`` is a corpus name or a callable on an (points, dim) array; for a
    callable pass ``dim`` (default 1).
    """
    if K < 1:
        raise ValueError("need at least one Gaussian component")
    if resolution < 256:
        raise ValueError("fit grid needs at least 256 points per axis")
    if isinstance(g, str):
        dim, fn = _target(g)
    else:
        dim, fn = dim or 1, g
    pts = grid(N, resolution, dim)
    target = np.ascontiguousarray(fn(pts), dtype=np.float64)

    rng = np.random.default_rng(seed)
    mu = rng.uniform(-N, N, (K, dim))
    log_s = np.full(K, np.log(2.0 * N / K))
    phi = np.exp(-((pts[:, None, :] - mu[None]) ** 2).sum(axis=2) / (2.0 * np.exp(log_s)[None] ** 2))
    c = np.linalg.lstsq(phi, target, rcond=None)[0]

    theta = [c, mu, log_s]
    m = [np.zeros_like(t) for t in theta]
    v = [np.zeros_like(t) for t in theta]
    b1, b2, eps = 0.9, 0.999, 1e-8
    best = (np.inf, [t.copy() for t in theta])
    for step in range(1, steps + 1):
        loss, gc, gmu, gls = Kn.gauss_sum_loss_grad(pts, target, theta[0], theta[1], theta[2])
        if not np.isfinite(loss):
            raise NumericError(f"Gaussian fit diverged at step {step}; try a smaller learning rate")
        if loss < best[0]:
            best = (loss, [t.copy() for t in theta])
        for t, gt, mt, vt in zip(theta, (gc, gmu, gls), m, v):
            mt *= b1
            mt += (1 - b1) * gt
            vt *= b2
            vt += (1 - b2) * gt * gt
            t -= lr * (mt / (1 - b1**step)) / (np.sqrt(vt / (1 - b2**step)) + eps)
    final = Kn.gauss_sum_loss_grad(pts, target, theta[0], theta[1], theta[2])[0]
    if final < best[0]:
        best = (final, theta)
    c, mu, log_s = best[1]
    return GaussianSum(c, mu, np.exp(log_s))


def uniform_error(g, approx: GaussianSum, N: float = 3.0, resolution: int = 1024, dim: int | None = None) -> float:
    """sup |g - approx| over an evaluation grid of ``resolution`` points per axis."""
    if isinstance(g, str):
        dim, fn = _target(g)
    else:
        dim, fn = dim or approx.dim, g
    pts = grid(N, resolution, dim)
    return float(np.max(np.abs(fn(pts) - approx(pts))))


@dataclass
class ApproximationReport:
    target: str
    N: float
    resolution: int
    Ks: list[int]
    errors: dict[int, list[float]] = field(default_factory=dict)

    def median(self, K: int) -> float:
        return float(np.median(self.errors[K]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("target,N,resolution,K,seed,uniform_error\n")
        for K in self.Ks:
            for seed, e in enumerate(self.errors[K]):
                buf.write(f"{self.target},{self.N!r},{self.resolution},{K},{seed},{e!r}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"target {self.target} on [-{self.N}, {self.N}], eval grid {self.resolution}"]
        for K in self.Ks:
            lines.append(f"  K={K:>3}  median uniform error {self.median(K):.6f}  over {len(self.errors[K])} seeds")
        return "\n".join(lines) + "\n"


def approximation_report(
    target: str,
    Ks,
    N: float = 3.0,
    seeds: int = 1,
    resolution: int | None = None,
    steps: int | None = None,
) -> ApproximationReport:
    Ks = sorted(int(k) for k in Ks)
    if len(set(Ks)) != len(Ks):
        raise ValueError("K values must be distinct")
    dim, _ = _target(target)
    resolution = resolution or (1024 if dim == 1 else 256)
    steps = steps or (3000 if dim == 1 else 600)
    rep = ApproximationReport(target, N, resolution, Ks)
    for K in Ks:
        rep.errors[K] = [
            uniform_error(target, fit_gaussian_sum(target, K, N, seed=s, steps=steps), N, resolution) for s in range(seeds)
        ]
    return rep


def verify_algebra(seed: int = 0, trials: int = 200) -> dict:
    """Numerical checks that Gaussians are closed under products, vanish nowhere and separate points."""
    rng = np.random.default_rng(seed)
    closure, sep_ok, pos_ok = 0.0, True, True
    for _ in range(trials):
        dim = int(rng.integers(1, 3))
        mu1, mu2 = rng.uniform(-2, 2, dim), rng.uniform(-2, 2, dim)
        s1, s2 = rng.uniform(0.3, 2.0, 2)
        pts = rng.uniform(-4, 4, (64, dim))
        scale, mu, s = gaussian_product(mu1, s1, mu2, s2)
        lhs = gaussian(pts, mu1, s1) * gaussian(pts, mu2, s2)
        closure = max(closure, float(np.max(np.abs(lhs - scale * gaussian(pts, mu, s)))))
        x, y = rng.uniform(-3, 3, dim), rng.uniform(-3, 3, dim)
        if not np.allclose(x, y):
            f = lambda p: gaussian(p, x, s1)  # noqa: E731
            sep_ok &= bool(f(x[None])[0] > f(y[None])[0])
        pos_ok &= bool(np.all(gaussian(pts, mu1, s1) > 0))
    return {
        "product_closure_max_error": closure,
        "product_closure": closure < 1e-9,
        "separates_points": sep_ok,
        "vanishes_nowhere": pos_ok,
    }

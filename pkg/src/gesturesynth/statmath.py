"""Gaussian densities and divergences, CCA, transition distances, rank tests."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
from scipy import linalg, stats

_log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
REG_SCALE = 1e-6
# a factor whose smallest squared pivot is below this fraction of the mean
# diagonal is treated as a failed factorization
PIVOT_FLOOR = 1e-12


def _cholesky(cov):
    low = linalg.cholesky(cov, lower=True)
    if np.min(np.diag(low)) ** 2 < PIVOT_FLOOR * max(float(np.mean(np.diag(cov))), 1e-300):
        raise linalg.LinAlgError("numerically singular")
    return low


class NumericError(ArithmeticError):
    """A numerical routine could not produce a valid result."""


def safe_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding ``1e-6 * mean(diag) * I`` once on failure."""
    cov = np.asarray(cov, dtype=float)
    try:
        return _cholesky(cov)
    except linalg.LinAlgError:
        pass
    eps = REG_SCALE * max(float(np.mean(np.diag(cov))), 1e-12)
    try:
        return linalg.cholesky(cov + eps * np.eye(cov.shape[0]), lower=True)
    except linalg.LinAlgError:
        raise NumericError("covariance not positive definite after regularization") from None


def regularize_cov(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and, if the Cholesky fails, add the floor used by :func:`safe_cholesky`."""
    cov = 0.5 * (cov + cov.T)
    try:
        _cholesky(cov)
        return cov
    except linalg.LinAlgError:
        eps = REG_SCALE * max(float(np.mean(np.diag(cov))), 1e-12)
        out = cov + eps * np.eye(cov.shape[0])
        safe_cholesky(out)
        return out


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-9, rtol=0):
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def chol(self) -> np.ndarray:
        return safe_cholesky(self.cov)

    @cached_property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @classmethod
    def fit(cls, x: np.ndarray, weights: np.ndarray | None = None) -> "GaussianParams":
        """Maximum-likelihood (optionally weighted) mean and full covariance."""
        x = np.asarray(x, dtype=float)
        if weights is None:
            weights = np.ones(x.shape[0])
        w = weights / weights.sum()
        mu = w @ x
        diff = x - mu
        cov = (diff * w[:, None]).T @ diff
        return cls(mu, regularize_cov(cov))


def gaussian_logpdf(x, g: GaussianParams):
    """log N(x; mean, cov) through the Cholesky factor.

    ``x`` may be a single d-vector or a (T, d) array of rows.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if xs.shape[1] != g.dim:
        raise ValueError(f"dimension mismatch: x has {xs.shape[1]}, Gaussian has {g.dim}")
    z = linalg.solve_triangular(g.chol, (xs - g.mean).T, lower=True)
    out = -0.5 * (g.dim * LOG_2PI + g.log_det + np.sum(z * z, axis=0))
    return float(out[0]) if single else out


def kl_gaussian(p: GaussianParams, q: GaussianParams) -> float:
    """KL(p || q) for multivariate Gaussians, with the log-determinant ratio term."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    try:
        lq = linalg.cholesky(q.cov, lower=True)
    except linalg.LinAlgError:
        raise NumericError("q covariance is singular") from None
    a = linalg.solve_triangular(lq, p.chol, lower=True)
    trace = float(np.sum(a * a))
    dm = linalg.solve_triangular(lq, q.mean - p.mean, lower=True)
    maha = float(dm @ dm)
    log_det_q = 2.0 * float(np.sum(np.log(np.diag(lq))))
    kl = 0.5 * (trace - (p.log_det - log_det_q) - p.dim + maha)
    return max(kl, 0.0)


def symmetric_kl(p: GaussianParams, q: GaussianParams) -> float:
    return 0.5 * (kl_gaussian(p, q) + kl_gaussian(q, p))


CCA_RIDGE = 1e-8


def _inv_sqrt(c: np.ndarray) -> np.ndarray:
    w, v = linalg.eigh(c)
    if w.min() <= 1e-12 * max(w.max(), 1e-300):
        raise NumericError("auto-covariance block is rank deficient")
    return (v / np.sqrt(w)) @ v.T


def cca(x, y, ridge: float | None = None) -> np.ndarray:
    """Canonical correlations of two data blocks, descending.

    Whitens each block with its auto-covariance and takes the singular values
    of the whitened cross-covariance. A ridge, relative to the mean diagonal
    of each block, is added only when a block is rank deficient (``None``:
    retry with ``CCA_RIDGE``) or always when ``ridge`` is given explicitly.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    n, p = x.shape
    q = y.shape[1]
    if y.shape[0] != n:
        raise ValueError("blocks must have the same number of rows")
    if n <= max(p, q) + 1:
        raise ValueError(f"need more than {max(p, q) + 1} rows, got {n}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite input")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    cxx = xc.T @ xc / (n - 1)
    cyy = yc.T @ yc / (n - 1)
    cxy = xc.T @ yc / (n - 1)
    def whitened(r):
        wx = _inv_sqrt(cxx + r * np.mean(np.diag(cxx)) * np.eye(p))
        wy = _inv_sqrt(cyy + r * np.mean(np.diag(cyy)) * np.eye(q))
        return wx @ cxy @ wy

    if ridge is None:
        try:
            m = whitened(0.0)
        except NumericError:
            m = whitened(CCA_RIDGE)
    else:
        m = whitened(ridge)
    s = linalg.svd(m, compute_uv=False)
    return np.clip(s[: min(p, q)], 0.0, 1.0)


def linf_distance(a, b) -> float:
    """Largest absolute entry-wise difference between two matrices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b)))


# --------------------------------------------------------------------------
# rank-based tests


def _pooled_ranks(groups):
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    arrays = [np.asarray(g, dtype=float).ravel() for g in groups]
    if any(a.size == 0 for a in arrays):
        raise ValueError("empty group")
    pooled = np.concatenate(arrays)
    if pooled.size < 3:
        raise ValueError("need at least 3 observations in total")
    ranks = stats.rankdata(pooled)
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_sum = float(np.sum(tie_counts.astype(float) ** 3 - tie_counts))
    bounds = np.cumsum([0] + [a.size for a in arrays])
    mean_ranks = np.array([ranks[bounds[i]:bounds[i + 1]].mean() for i in range(len(arrays))])
    sizes = np.array([a.size for a in arrays], dtype=float)
    return mean_ranks, sizes, pooled.size, tie_sum


def kruskal_wallis(groups) -> tuple[float, float]:
    """Tie-corrected Kruskal-Wallis H and its chi-square p-value."""
    mean_ranks, sizes, n, tie_sum = _pooled_ranks(groups)
    h = 12.0 / (n * (n + 1)) * np.sum(sizes * mean_ranks ** 2) - 3.0 * (n + 1)
    correction = 1.0 - tie_sum / (n ** 3 - n)
    if correction <= 0:
        return 0.0, 1.0
    h = max(h / correction, 0.0)
    return float(h), float(stats.chi2.sf(h, len(sizes) - 1))


def dunn_sidak_pairs(groups, alpha: float = 0.05) -> list[tuple[int, int]]:
    """Pairs of group indices that differ under Dunn's test at the Sidak level."""
    mean_ranks, sizes, n, tie_sum = _pooled_ranks(groups)
    pairs = list(combinations(range(len(sizes)), 2))
    level = 1.0 - (1.0 - alpha) ** (1.0 / len(pairs))
    var = n * (n + 1) / 12.0 - tie_sum / (12.0 * (n - 1))
    out = []
    if var <= 0:
        return out
    for i, j in pairs:
        z = (mean_ranks[i] - mean_ranks[j]) / np.sqrt(var * (1.0 / sizes[i] + 1.0 / sizes[j]))
        if 2.0 * stats.norm.sf(abs(z)) < level:
            out.append((i, j))
    return out


def behavior_histograms(context_labels, behavior_labels) -> dict:
    """Distribution of behavior labels within each context label.

    Frame counts are normalized per context so every histogram sums to one,
    which keeps frequent and rare contexts comparable.
    """
    ctx = np.asarray(context_labels)
    beh = np.asarray(behavior_labels)
    if ctx.shape != beh.shape:
        raise ValueError("label tracks must be aligned")
    behaviors = sorted(set(beh.tolist()))
    out = {}
    for c in sorted(set(ctx.tolist())):
        sel = beh[ctx == c]
        out[c] = {b: float(np.mean(sel == b)) for b in behaviors}
    return out

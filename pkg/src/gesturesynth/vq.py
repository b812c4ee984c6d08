"""Linde-Buzo-Gray vector quantization and state initialization."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .statmath import GaussianParams

_log = logging.getLogger(__name__)

MIN_FRAMES_PER_STATE = 10


class InsufficientData(ValueError):
    pass


@dataclass
class Codebook:
    centroids: np.ndarray
    assignments: np.ndarray
    distortion: float
    history: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]


def _assign(data, centroids):
    labels, d2 = _kernels.assign(np.ascontiguousarray(data), np.ascontiguousarray(centroids))
    return labels, float(d2.mean())


def _means(data, labels, k, fallback):
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, data.shape[1]))
    np.add.at(sums, labels, data)
    out = fallback.copy()
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz, None]
    return out, counts


def _fill_empty(data, labels, centroids, counts):
    """Move each empty centroid onto the worst-quantized point of the largest cluster."""
    for c in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        err = ((data[members] - centroids[big]) ** 2).sum(axis=1)
        p = members[int(np.argmax(err))]
        centroids[c] = data[p]
        labels[p] = c
        counts[big] -= 1
        counts[c] += 1
    return centroids


def _lloyd(data, centroids, labels, distortion, max_iter, tol, history):
    k = centroids.shape[0]
    for _ in range(max_iter):
        centroids, counts = _means(data, labels, k, centroids)
        if np.any(counts == 0):
            centroids = _fill_empty(data, labels, centroids, counts)
        labels, new = _assign(data, centroids)
        if new > distortion * (1 + 1e-12) + 1e-300:
            raise AssertionError(f"Lloyd step increased distortion {distortion} -> {new}")
        history.append(new)
        done = distortion - new <= tol * max(distortion, 1e-300)
        distortion = new
        if done:
            break
    return centroids, labels, distortion


def _split(centroids, scale, eps):
    tiny = np.abs(centroids) < 1e-3 * scale
    delta = eps * np.where(tiny, scale, np.abs(centroids))
    return np.vstack([centroids - delta, centroids + delta])


def lbg(data, size: int, eps_split: float = 0.01, max_iter: int = 100, tol: float = 1e-6) -> Codebook:
    """Split-and-refine codebook of ``size`` (a power of two) centroids.

    Each round doubles the codebook by perturbing every centroid to
    ``c * (1 -/+ eps_split)`` (components that are ~0 relative to the data
    spread are perturbed by ``eps_split * std`` instead) and runs Lloyd
    iterations until the relative distortion change drops below ``tol``.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InsufficientData("data must be a non-empty 2-D array")
    if size < 1 or size & (size - 1):
        raise ValueError(f"codebook size must be a power of two, got {size}")
    if data.shape[0] < size:
        raise InsufficientData(f"{data.shape[0]} vectors cannot fill {size} codewords")
    scale = data.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    centroids = data.mean(axis=0, keepdims=True)
    labels = np.zeros(data.shape[0], dtype=np.int64)
    distortion = float(((data - centroids) ** 2).sum(axis=1).mean())
    history = [distortion]
    while centroids.shape[0] < size:
        k = centroids.shape[0]
        children = _split(centroids, scale, eps_split)
        # refine the previous partition first so the split never raises distortion
        lo = ((data - children[labels]) ** 2).sum(axis=1)
        hi = ((data - children[labels + k]) ** 2).sum(axis=1)
        labels = labels + k * (hi < lo)
        centroids, labels, distortion = _lloyd(data, children, labels, distortion, max_iter, tol, history)
    return Codebook(centroids, labels, distortion, history)


def _ward_merge(data, labels, n_target):
    """Merge clusters pairwise by smallest increase in within-cluster squared error."""
    groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    while len(groups) > n_target:
        means = np.array([data[g].mean(axis=0) for g in groups])
        sizes = np.array([g.size for g in groups], dtype=float)
        d2 = ((means[:, None] - means[None]) ** 2).sum(axis=-1)
        cost = sizes[:, None] * sizes[None] / (sizes[:, None] + sizes[None]) * d2
        cost[np.diag_indices_from(cost)] = np.inf
        i, j = np.unravel_index(np.argmin(cost), cost.shape)
        i, j = min(i, j), max(i, j)
        groups[i] = np.concatenate([groups[i], groups[j]])
        del groups[j]
    out = np.empty(data.shape[0], dtype=np.int64)
    for c, g in enumerate(groups):
        out[g] = c
    return out


def cluster_labels(joint_data, n_states: int, method: str = "vq", rng=None, **lbg_kw) -> np.ndarray:
    data = np.asarray(joint_data, dtype=float)
    if data.shape[0] < MIN_FRAMES_PER_STATE * n_states:
        raise InsufficientData(
            f"{data.shape[0]} frames for {n_states} states; need at least {MIN_FRAMES_PER_STATE} per state")
    if method == "random":
        rng = np.random.default_rng(rng)
        labels = rng.permutation(np.arange(data.shape[0]) % n_states)
        return labels.astype(np.int64)
    if method != "vq":
        raise ValueError(f"unknown initialization method {method!r}")
    size = 1 << max(n_states - 1, 0).bit_length()
    book = lbg(data, size, **lbg_kw)
    if size == n_states:
        return book.assignments
    return _ward_merge(data, book.assignments, n_states)


def init_states(joint_data, n_states: int, speech_dim: int, method: str = "vq", rng=None, **lbg_kw):
    """Gaussian states from a clustering of joint speech+motion frames.

    Columns ``[:speech_dim]`` are speech, the rest motion. ``method="random"``
    assigns frames to states uniformly at random instead; it exists as the
    comparison baseline for the VQ initialization.
    """
    from .dbn import GaussianState

    data = np.asarray(joint_data, dtype=float)
    labels = cluster_labels(data, n_states, method=method, rng=rng, **lbg_kw)
    states = []
    for c in range(n_states):
        members = data[labels == c]
        states.append(GaussianState(
            GaussianParams.fit(members[:, :speech_dim]),
            GaussianParams.fit(members[:, speech_dim:]),
        ))
    return states

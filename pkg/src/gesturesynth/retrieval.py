"""Exemplar-based retrieval of prototypical gesture segments.

Pipeline per turn: greedy nonuniform downsampling, multi-scale sliding
windows on the downsampled timeline, a cheap novelty screen against the
exemplars, DTAK scoring of the survivors, per-subject thresholds, and
score-based removal of overlapping detections.

The novelty screen is a diagonal Gaussian envelope over segment summary
features (per-dimension mean, std and range). Anything exposing
``fit(exemplars)`` and ``keep(segments) -> bool array`` can replace it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    turn: str
    start: int
    end: int            # exclusive
    score: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("segment must have start < end")

    def overlaps(self, other: "Segment") -> bool:
        return self.turn == other.turn and self.start < other.end and other.start < self.end


@dataclass
class RetrievalConfig:
    scales: tuple = (30, 60, 90, 120)
    tolerance: float = 0.5
    sigma: float | None = None
    radius: float = 3.0
    thresholds: dict = field(default_factory=dict)   # {gesture: {subject: threshold}}

    def __post_init__(self):
        if not self.scales or min(self.scales) < 2:
            raise ValueError("scales must be non-empty and each >= 2")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


def nonuniform_downsample(traj, tolerance: float) -> np.ndarray:
    """Indices kept by a greedy walk: a frame is kept once it moves more than
    ``tolerance`` away from the last kept frame. First and last are always kept."""
    traj = np.asarray(traj, dtype=float)
    if traj.ndim == 1:
        traj = traj[:, None]
    if traj.shape[0] == 0:
        raise RetrievalError("empty trajectory")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    keep = [0]
    last = traj[0]
    for i in range(1, traj.shape[0] - 1):
        if np.linalg.norm(traj[i] - last) > tolerance:
            keep.append(i)
            last = traj[i]
    if traj.shape[0] > 1:
        keep.append(traj.shape[0] - 1)
    return np.array(keep, dtype=np.int64)


def multiscale_windows(indices, scales, turn: str = "") -> list[Segment]:
    """Windows spanning ``s`` downsampled steps for every scale ``s``, stride one step.

    A window starting at downsampled position ``p`` covers original frames
    ``indices[p]`` through ``indices[p + s - 1]`` inclusive.
    """
    idx = np.asarray(indices)
    out = []
    for s in scales:
        for p in range(len(idx) - s + 1):
            out.append(Segment(turn, int(idx[p]), int(idx[p + s - 1]) + 1))
    return out


def summary_features(seg) -> np.ndarray:
    seg = np.asarray(seg, dtype=float)
    return np.concatenate([seg.mean(axis=0), seg.std(axis=0), np.ptp(seg, axis=0)])


class GaussianEnvelope:
    """Diagonal Gaussian over exemplar summary features; rejects by Mahalanobis radius."""

    def __init__(self, radius: float = 3.0):
        self.radius = radius

    def fit(self, exemplars):
        if len(exemplars) == 0:
            raise RetrievalError("screen needs at least one exemplar")
        feats = np.array([summary_features(e) for e in exemplars])
        self.mean_ = feats.mean(axis=0)
        sd = feats.std(axis=0, ddof=1) if len(feats) > 1 else np.zeros(feats.shape[1])
        self.std_ = np.maximum(sd, 1e-3 * (np.abs(self.mean_) + 1.0))
        return self

    def distance(self, seg) -> float:
        z = (summary_features(seg) - self.mean_) / self.std_
        return float(np.sqrt(z @ z))

    def keep(self, segments) -> np.ndarray:
        return np.array([self.distance(s) <= self.radius for s in segments], dtype=bool)


def screen(candidates, exemplars, radius: float = 3.0, traj=None):
    """Drop candidates far from the exemplar envelope.

    ``candidates`` are arrays of frames, or :class:`Segment` objects resolved
    against ``traj``.
    """
    env = GaussianEnvelope(radius).fit(exemplars)
    arrays = [traj[c.start:c.end] if isinstance(c, Segment) else c for c in candidates]
    keep = env.keep(arrays)
    return [c for c, k in zip(candidates, keep) if k]


def dtak(seg_a, seg_b, sigma: float) -> float:
    """Dynamic time alignment kernel similarity in [0, 1].

    Segments are (n, d) frame arrays; a 1-D array is read as n scalar frames.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    a = np.asarray(seg_a, dtype=float)
    b = np.asarray(seg_b, dtype=float)
    a = np.ascontiguousarray(a[:, None] if a.ndim == 1 else a)
    b = np.ascontiguousarray(b[:, None] if b.ndim == 1 else b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("segments must be non-empty")
    return float(_kernels.dtak_kernel(a, b, float(sigma)))


def median_bandwidth(exemplars) -> float:
    frames = np.concatenate([np.asarray(e, dtype=float) for e in exemplars])
    if frames.shape[0] > 2000:
        frames = frames[np.linspace(0, frames.shape[0] - 1, 2000).astype(int)]
    d = np.sqrt(((frames[:, None] - frames[None]) ** 2).sum(axis=-1))
    med = float(np.median(d[np.triu_indices_from(d, 1)]))
    return med if med > 0 else 1.0


def select_threshold(scores, truth) -> float:
    """Score threshold with the best precision; ties go to the lower threshold (more recall)."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if not truth.any():
        raise RetrievalError("no positive examples")
    best_t, best_p = None, -1.0
    for t in np.unique(scores)[::-1]:
        sel = scores >= t
        p = truth[sel].mean()
        if p >= best_p:
            best_t, best_p = float(t), p
    return best_t


def select_thresholds(scored) -> dict:
    """Per-subject thresholds from ``{subject: (scores, truth)}``."""
    out = {}
    for subject, (scores, truth) in scored.items():
        try:
            out[subject] = select_threshold(scores, truth)
        except RetrievalError:
            raise RetrievalError(f"subject {subject!r} has no positive segments in the dev set") from None
    return out


def _suppress(detections):
    """Greedy by score: keep a detection only if it overlaps nothing kept so far."""
    kept = []
    for d in sorted(detections, key=lambda s: (-s.score, s.turn, s.start, s.end, s.label)):
        if not any(d.overlaps(k) for k in kept):
            kept.append(d)
    return sorted(kept, key=lambda s: (s.turn, s.start, s.end))


def score_candidates(traj, exemplars, config: RetrievalConfig, turn: str = "", sigma: float | None = None):
    """Screened candidates of one turn with their best DTAK score against the exemplars."""
    traj = np.asarray(traj, dtype=float)
    sigma = sigma or config.sigma or median_bandwidth(exemplars)
    idx = nonuniform_downsample(traj, config.tolerance)
    cands = multiscale_windows(idx, config.scales, turn)
    cands = screen(cands, exemplars, config.radius, traj) if cands else []
    out = []
    for c in cands:
        s = max(dtak(traj[c.start:c.end], e, sigma) for e in exemplars)
        out.append(Segment(c.turn, c.start, c.end, s))
    return out


def truth_overlap(seg: Segment, labels, gesture) -> bool:
    """A detection is correct when most of its frames carry the gesture label."""
    return bool(np.mean(np.asarray(labels[seg.start:seg.end]) == gesture) >= 0.5)


def calibrate(turns, exemplars: dict, config: RetrievalConfig) -> RetrievalConfig:
    """Fill ``config.thresholds`` from labeled dev turns.

    ``turns`` are ``(turn_id, subject, motion, labels)`` tuples.
    """
    thresholds = {}
    for gesture, ex in exemplars.items():
        sigma = config.sigma or median_bandwidth(ex)
        per_subject = {}
        for tid, subject, motion, labels in turns:
            for seg in score_candidates(motion, ex, config, tid, sigma):
                sc, tr = per_subject.setdefault(subject, ([], []))
                sc.append(seg.score)
                tr.append(truth_overlap(seg, labels, gesture))
        thresholds[gesture] = select_thresholds(per_subject)
    config.thresholds = thresholds
    return config


def retrieve(turns, exemplars: dict, config: RetrievalConfig):
    """Detect every gesture in every turn.

    ``turns`` are ``(turn_id, subject, motion, labels_or_None)``. Returns the
    kept detections and, when labels are present, a per-gesture precision
    report ``{gesture: {"retrieved": n, "correct": c, "precision": p}}``.
    """
    if not exemplars or any(len(v) == 0 for v in exemplars.values()):
        raise RetrievalError("exemplar set is empty")
    detections = []
    for gesture, ex in exemplars.items():
        sigma = config.sigma or median_bandwidth(ex)
        for tid, subject, motion, _ in turns:
            thr = config.thresholds.get(gesture, {}).get(subject, 1.0 - 1e-9)
            for seg in score_candidates(motion, ex, config, tid, sigma):
                if seg.score >= thr:
                    detections.append(Segment(seg.turn, seg.start, seg.end, seg.score, gesture))
    kept = _suppress(detections)
    labels = {tid: lab for tid, _, _, lab in turns}
    report = {}
    if all(lab is not None for lab in labels.values()):
        for gesture in exemplars:
            mine = [d for d in kept if d.label == gesture]
            correct = sum(truth_overlap(d, labels[d.turn], gesture) for d in mine)
            report[gesture] = {"retrieved": len(mine), "correct": int(correct),
                               "precision": correct / len(mine) if mine else float("nan")}
    return kept, report


def segments_to_labels(segments, n_frames: int, background: str = "other") -> np.ndarray:
    labels = np.full(n_frames, background, dtype=object)
    for s in segments:
        labels[s.start:s.end] = s.label
    return labels

"""Constrained DBN: a discrete constraint node parenting the hidden state.

Every constraint ``k`` owns a transition matrix ``trans[k]`` and a start
distribution ``priors[k]`` over a subset ``S_k`` of the merged states. The
matrices are sparse by construction: states are first trained separately per
constraint, similar states are merged across constraints (symmetrized Gaussian
KL below a threshold), and one extra global state shared by every constraint
keeps constraint switches feasible.

Rows of ``trans[k]`` for states outside ``S_k`` send all mass to the global
state, so a change of constraint mid-turn hops through it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import dbn
from .dbn import DbnModel, GaussianState, safe_log
from .statmath import GaussianParams, regularize_cov, symmetric_kl
from .vq import MIN_FRAMES_PER_STATE, init_states

_log = logging.getLogger(__name__)

OTHER = "other"
MERGE_THRESHOLD = 1.0
# states per constraint for the (region, constraint mode) pairs
DEFAULT_STATES = {
    ("head", "none"): 7, ("head", "discourse"): 7, ("head", "gesture"): 8,
    ("hand", "none"): 12, ("hand", "discourse"): 8, ("hand", "gesture"): 9,
}


class ConstraintError(ValueError):
    pass


def constraint_set(labels) -> tuple:
    """Ordered, de-duplicated labels with ``other`` always present (and first)."""
    out = [OTHER]
    for lab in labels:
        if lab not in out:
            out.append(str(lab))
    return tuple(out)


def encode_track(constraints, track) -> np.ndarray:
    index = {c: i for i, c in enumerate(constraints)}
    try:
        return np.array([index[t] for t in track], dtype=np.int64)
    except KeyError as exc:
        raise ConstraintError(f"unknown constraint label {exc.args[0]!r}; model knows {list(constraints)}") from None


@dataclass
class CdbnModel:
    constraints: tuple
    states: list
    trans: np.ndarray          # (K, M, M)
    priors: np.ndarray         # (K, M)
    mask: np.ndarray           # (K, M) bool, support S_k
    constraint_prior: np.ndarray
    global_state: int | None = None

    def __post_init__(self):
        self.constraints = tuple(self.constraints)
        K, M = len(self.constraints), len(self.states)
        if len(set(self.constraints)) != K or K < 1:
            raise ValueError("constraint labels must be unique and non-empty")
        self.trans = np.asarray(self.trans, dtype=float)
        self.priors = np.asarray(self.priors, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.constraint_prior = np.asarray(self.constraint_prior, dtype=float)
        if self.trans.shape != (K, M, M) or self.priors.shape != (K, M) or self.mask.shape != (K, M):
            raise ValueError("parameter shapes do not match constraints/states")
        self.check()

    def check(self):
        """Raise if any structural invariant is violated."""
        t, m = self.trans, self.mask
        if np.any(t < 0) or not np.allclose(t.sum(axis=2), 1.0, atol=1e-9, rtol=0):
            raise ValueError("transition rows must be stochastic")
        if np.any(t[~np.broadcast_to(m[:, None, :], t.shape)] != 0):
            raise ValueError("transition mass into states outside the constraint support")
        if np.any(self.priors[~m] != 0) or not np.allclose(self.priors.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("priors must be stochastic and zero off support")
        if not m.any(axis=1).all() or not m.any(axis=0).all():
            raise ValueError("every support must be non-empty and together cover all states")
        if self.global_state is not None and not m[:, self.global_state].all():
            raise ValueError("global state must belong to every support")
        if not np.isclose(self.constraint_prior.sum(), 1.0, atol=1e-9):
            raise ValueError("constraint prior must sum to 1")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def motion_means(self) -> np.ndarray:
        return np.array([s.motion.mean for s in self.states])

    @classmethod
    def from_dbn(cls, model: DbnModel, constraints=(OTHER,)) -> "CdbnModel":
        """Every constraint gets the baseline matrix over the full state set."""
        K = len(constraints)
        return cls(constraints, list(model.states), np.repeat(model.trans[None], K, axis=0),
                   np.repeat(model.prior[None], K, axis=0), np.ones((K, model.n_states), bool),
                   np.full(K, 1.0 / K))


# --------------------------------------------------------------------------
# per-constraint training and merging


def _segments(labels, k):
    """(start, stop) of maximal runs equal to ``k``."""
    hit = np.concatenate([[False], np.asarray(labels) == k, [False]])
    edges = np.flatnonzero(np.diff(hit.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def train_per_constraint_states(sequences, constraints, n_states: int, *, em_iter: int = 20,
                                tol: float = 1e-4, threads: int = 1):
    """Train ``n_states`` Gaussian states separately for each constraint.

    ``sequences`` holds ``(speech, motion, track)`` with label tracks. Each
    constraint is fitted on the contiguous segments carrying its label: VQ
    initialization followed by baseline EM. Returns ``{label: (states,
    occupancy)}``.
    """
    out = {}
    for label in constraints:
        segs = []
        for speech, motion, track in sequences:
            for a, b in _segments(np.asarray(track), label):
                segs.append((np.asarray(speech)[a:b], np.asarray(motion)[a:b]))
        n_frames = sum(len(s) for s, _ in segs)
        if n_frames == 0:
            raise ConstraintError(f"constraint {label!r} has no labeled frames")
        n = n_states
        if n_frames < MIN_FRAMES_PER_STATE * n:
            n = max(1, n_frames // MIN_FRAMES_PER_STATE)
            _log.warning("constraint %r has %d frames; reducing its state count %d -> %d",
                         label, n_frames, n_states, n)
        speech = np.concatenate([s for s, _ in segs])
        motion = np.concatenate([m for _, m in segs])
        states = init_states(np.hstack([speech, motion]), n, speech.shape[1])
        model, _ = dbn.em_train(DbnModel.ergodic(states), segs, max_iter=em_iter, tol=tol, threads=threads)
        out[label] = (model.states, dbn.state_occupancy(model, segs))
    return out


def _pool(a: GaussianParams, na: float, b: GaussianParams, nb: float) -> GaussianParams:
    n = na + nb
    mu = (na * a.mean + nb * b.mean) / n
    second = (na * (a.cov + np.outer(a.mean, a.mean)) + nb * (b.cov + np.outer(b.mean, b.mean))) / n
    return GaussianParams(mu, regularize_cov(second - np.outer(mu, mu)))


def pool_states(a: GaussianState, na: float, b: GaussianState, nb: float) -> GaussianState:
    """Occupancy-weighted moment match of two states, block by block."""
    return GaussianState(_pool(a.speech, na, b.speech, nb), _pool(a.motion, na, b.motion, nb))


def merge_states(per_constraint, constraints, global_state: GaussianState, threshold: float = MERGE_THRESHOLD):
    """Merge near-duplicate states across constraints.

    Constraints are visited in ``constraints`` order. For each state still
    owned by constraint ``k`` the closest entry (symmetrized KL of the joint
    block-diagonal Gaussians) among entries used by some other constraint is
    found; below ``threshold`` the two are pooled and the result is shared.
    ``global_state`` is appended last and belongs to every support.

    Returns ``(states, mask, occupancy)`` with ``mask`` shaped (K, M).
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    entries = []   # [state, occupancy, set of constraint indices]
    origin = []    # (constraint index, entry index) per original state
    for k, label in enumerate(constraints):
        states, occ = per_constraint[label]
        for s, o in zip(states, occ):
            origin.append((k, len(entries)))
            entries.append([s, max(float(o), 1e-12), {k}])
    redirect = list(range(len(entries)))

    def live(e):
        while redirect[e] != e:
            e = redirect[e]
        return e

    for k, start in origin:
        e = live(start)
        if entries[e] is None:
            continue
        joint = entries[e][0].joint()
        best, best_d = None, np.inf
        for f, other in enumerate(entries):
            if other is None or f == e or not (other[2] - {k}):
                continue
            d = symmetric_kl(joint, other[0].joint())
            if d < best_d:
                best, best_d = f, d
        if best is not None and best_d < threshold:
            lo, hi = min(e, best), max(e, best)
            a, b = entries[lo], entries[hi]
            entries[lo] = [pool_states(a[0], a[1], b[0], b[1]), a[1] + b[1], a[2] | b[2]]
            entries[hi] = None
            redirect[hi] = lo

    kept = [x for x in entries if x is not None]
    K = len(constraints)
    mask = np.zeros((K, len(kept) + 1), dtype=bool)
    for i, (_, _, owners) in enumerate(kept):
        mask[sorted(owners), i] = True
    mask[:, -1] = True
    states = [x[0] for x in kept] + [global_state]
    occ = np.array([x[1] for x in kept] + [np.nan])
    return states, mask, occ


def build_sparse_transitions(mask, global_state: int):
    """Uniform transitions inside each support, a forced hop to the global state outside it."""
    mask = np.asarray(mask, dtype=bool)
    K, M = mask.shape
    trans = np.zeros((K, M, M))
    priors = np.zeros((K, M))
    for k in range(K):
        sk = mask[k]
        trans[k][np.ix_(sk, sk)] = 1.0 / sk.sum()
        trans[k][~sk, global_state] = 1.0
        priors[k, sk] = 1.0 / sk.sum()
    return trans, priors


def label_frequencies(sequences, constraints) -> np.ndarray:
    counts = np.zeros(len(constraints))
    for _, _, track in sequences:
        counts += np.bincount(encode_track(constraints, track), minlength=len(constraints))
    return counts / counts.sum()


def initialize(sequences, constraints, n_states: int, *, threshold: float = MERGE_THRESHOLD,
               em_iter: int = 20, threads: int = 1) -> CdbnModel:
    """Sparse-support model from per-constraint training and merging (no joint EM yet)."""
    constraints = tuple(constraints)
    per = train_per_constraint_states(sequences, constraints, n_states, em_iter=em_iter, threads=threads)
    speech = np.concatenate([np.asarray(s, float) for s, _, _ in sequences])
    motion = np.concatenate([np.asarray(m, float) for _, m, _ in sequences])
    glob = GaussianState(GaussianParams.fit(speech), GaussianParams.fit(motion))
    states, mask, _ = merge_states(per, constraints, glob, threshold)
    g = len(states) - 1
    trans, priors = build_sparse_transitions(mask, g)
    return CdbnModel(constraints, states, trans, priors, mask, label_frequencies(sequences, constraints), g)


def constrained_em(model: CdbnModel, sequences, max_iter: int = 50, tol: float = 1e-4, *,
                   freeze_gaussians: bool = False, threads: int = 1, min_row_count: float = dbn.MIN_ROW_COUNT):
    """Refine a constrained model with EM.

    ``sequences`` holds ``(speech, motion, track)``. Each transition into
    frame ``t`` uses ``trans[track[t]]`` and each sequence starts from
    ``priors[track[0]]``. Only in-support rows are re-estimated, from
    transitions that happen under their own constraint; structural zeros are
    never touched. Returns the refined model and the log-likelihood rates.
    """
    seqs = [(s, m, encode_track(model.constraints, c)) for s, m, c in sequences]
    res = dbn.run_em(model.states, model.priors, model.trans, seqs, row_free=model.mask, max_iter=max_iter,
                     tol=tol, freeze_gaussians=freeze_gaussians, threads=threads, min_row_count=min_row_count)
    out = CdbnModel(model.constraints, res.states, res.trans, res.prior, model.mask,
                    model.constraint_prior, model.global_state)
    return out, res.history


def train_cdbn(sequences, constraints, n_states: int, *, threshold: float = MERGE_THRESHOLD,
               em_iter: int = 30, init_em_iter: int = 20, tol: float = 1e-4, freeze_gaussians: bool = False,
               threads: int = 1):
    """Full constrained pipeline: per-constraint states, merge, sparse init, constrained EM."""
    model = initialize(sequences, constraints, n_states, threshold=threshold, em_iter=init_em_iter,
                       threads=threads)
    return constrained_em(model, sequences, max_iter=em_iter, tol=tol, freeze_gaussians=freeze_gaussians,
                          threads=threads)


def train_shared(sequences, constraints, n_states: int, *, em_iter: int = 30, tol: float = 1e-4,
                 threads: int = 1):
    """Ablation: one set of states for all constraints, per-constraint transitions.

    A baseline DBN is trained on all frames; every constraint then starts from
    its transition matrix over the full state set and constrained EM
    re-estimates the matrices per constraint.
    """
    pairs = [(s, m) for s, m, _ in sequences]
    base, _ = dbn.train_baseline(pairs, n_states, max_iter=em_iter, tol=tol, threads=threads)
    model = CdbnModel.from_dbn(base, tuple(constraints))
    model.constraint_prior = label_frequencies(sequences, model.constraints)
    return constrained_em(model, sequences, max_iter=em_iter, tol=tol, threads=threads)


# --------------------------------------------------------------------------
# synthesis


def _tensors(model: CdbnModel):
    return safe_log(model.priors), safe_log(model.trans)


def constrained_posterior(model: CdbnModel, speech, track, mode: str = "smoothed") -> np.ndarray:
    speech = np.asarray(speech, dtype=float)
    if len(track) != speech.shape[0]:
        raise ConstraintError(f"constraint track has {len(track)} frames, speech has {speech.shape[0]}")
    ct = encode_track(model.constraints, track)
    log_prior, log_trans = _tensors(model)
    return dbn.gamma_from(dbn.speech_loglik(model.states, speech), log_prior, log_trans, ct, mode)


def constrained_synthesize(model: CdbnModel, speech, track, mode: str = "smoothed") -> np.ndarray:
    """Expected motion given speech and the constraint track of the whole turn."""
    return constrained_posterior(model, speech, track, mode) @ model.motion_means


def constrained_loglik_rate(model: CdbnModel, sequences, observation: str = "full") -> float:
    log_prior, log_trans = _tensors(model)
    total, frames = 0.0, 0
    for speech, motion, track in sequences:
        log_b = dbn.emission_loglik(model.states, speech, motion if observation == "full" else None)
        total += dbn.forward_backward(log_b, log_prior, log_trans, encode_track(model.constraints, track))[1]
        frames += log_b.shape[0]
    return total / frames

"""Joint speech/motion DBN with a shared discrete hidden state.

The hidden state emits a speech Gaussian and a motion Gaussian that are
conditionally independent given the state. Training sees both streams (full
observation); synthesis sees speech only (partial observation) and returns the
posterior-weighted average of the state motion means.

The inference and EM routines here are written against a constraint-indexed
transition tensor so the constrained model in :mod:`gesturesynth.cdbn` reuses
them unchanged; the unconstrained model is simply the single-constraint case.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .statmath import GaussianParams, NumericError, gaussian_logpdf, regularize_cov

_log = logging.getLogger(__name__)

GAMMA_MODES = ("smoothed", "viterbi")
STARVATION = 1e-3
MIN_ROW_COUNT = 1.0


@dataclass(frozen=True)
class GaussianState:
    """One hidden-state configuration: a speech Gaussian and a motion Gaussian."""

    speech: GaussianParams
    motion: GaussianParams

    def joint(self) -> GaussianParams:
        ds, dm = self.speech.dim, self.motion.dim
        cov = np.zeros((ds + dm, ds + dm))
        cov[:ds, :ds] = self.speech.cov
        cov[ds:, ds:] = self.motion.cov
        return GaussianParams(np.concatenate([self.speech.mean, self.motion.mean]), cov)


def _check_stochastic(mat, name):
    mat = np.asarray(mat, dtype=float)
    if np.any(mat < 0) or not np.allclose(mat.sum(axis=-1), 1.0, atol=1e-9, rtol=0):
        raise ValueError(f"{name} must be non-negative with rows summing to 1")
    return mat


@dataclass
class DbnModel:
    states: list
    trans: np.ndarray
    prior: np.ndarray

    def __post_init__(self):
        n = len(self.states)
        if n < 1:
            raise ValueError("model needs at least one state")
        self.trans = _check_stochastic(self.trans, "trans")
        self.prior = _check_stochastic(self.prior, "prior")
        if self.trans.shape != (n, n) or self.prior.shape != (n,):
            raise ValueError("trans/prior shapes do not match the state count")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def motion_means(self) -> np.ndarray:
        return np.array([s.motion.mean for s in self.states])

    @classmethod
    def ergodic(cls, states, self_prob: float | None = None) -> "DbnModel":
        """Fully connected model with uniform prior.

        ``self_prob`` puts that much mass on the diagonal and spreads the rest
        evenly; by default every transition is equally likely.
        """
        n = len(states)
        if self_prob is None or n == 1:
            trans = np.full((n, n), 1.0 / n)
        else:
            trans = np.full((n, n), (1.0 - self_prob) / (n - 1))
            np.fill_diagonal(trans, self_prob)
        return cls(list(states), trans, np.full(n, 1.0 / n))


# --------------------------------------------------------------------------
# emissions


def speech_loglik(states, speech) -> np.ndarray:
    speech = np.atleast_2d(np.asarray(speech, dtype=float))
    return np.column_stack([gaussian_logpdf(speech, s.speech) for s in states])


def motion_loglik(states, motion) -> np.ndarray:
    motion = np.atleast_2d(np.asarray(motion, dtype=float))
    return np.column_stack([gaussian_logpdf(motion, s.motion) for s in states])


def emission_loglik(states, speech, motion=None) -> np.ndarray:
    """(T, N) log-emissions; full observation when ``motion`` is given."""
    out = speech_loglik(states, speech)
    if motion is not None:
        out = out + motion_loglik(states, motion)
    return out


def obs_logprob(model: DbnModel, speech, motion=None, i: int = 0) -> float:
    """Log observation probability of one frame under state ``i``.

    With motion this is the full-observation term (speech and motion
    log-densities added); without it, the partial-observation term.
    """
    if not 0 <= i < model.n_states:
        raise IndexError(f"state {i} out of range for {model.n_states} states")
    state = model.states[i]
    lp = gaussian_logpdf(np.asarray(speech, dtype=float), state.speech)
    if motion is not None:
        lp += gaussian_logpdf(np.asarray(motion, dtype=float), state.motion)
    return lp


# --------------------------------------------------------------------------
# inference over a constraint-indexed transition tensor


def safe_log(p) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=float))


def _as_track(ctrack, T):
    if ctrack is None:
        return np.zeros(T, dtype=np.int64)
    return np.ascontiguousarray(ctrack, dtype=np.int64)


def forward_backward(log_b, log_prior, log_trans, ctrack=None):
    """Smoothed posteriors and log-evidence.

    ``log_prior`` is (K, N), ``log_trans`` is (K, N, N). Returns
    ``(gamma, loglik, alpha, beta)``; gamma rows are renormalized per frame.
    """
    log_b = np.ascontiguousarray(log_b, dtype=float)
    T = log_b.shape[0]
    if T == 0:
        raise ValueError("empty sequence")
    ctrack = _as_track(ctrack, T)
    alpha = _kernels.forward(log_b, log_prior, log_trans, ctrack)
    dead = np.flatnonzero(~np.isfinite(alpha).any(axis=1))
    if dead.size:
        raise NumericError(f"observation sequence has zero probability at frame {int(dead[0])}")
    beta = _kernels.backward(log_b, log_trans, ctrack)
    loglik = float(_logsumexp_row(alpha[-1])[0])
    lg = alpha + beta
    lg -= _logsumexp_row(lg)[:, None]
    return np.exp(lg), loglik, alpha, beta


def _logsumexp_row(a):
    a = np.atleast_2d(a)
    m = a.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(a - m[:, None]).sum(axis=1)) + m
    return out


def viterbi_path(log_b, log_prior, log_trans, ctrack=None):
    log_b = np.ascontiguousarray(log_b, dtype=float)
    ctrack = _as_track(ctrack, log_b.shape[0])
    path, score = _kernels.viterbi(log_b, log_prior, log_trans, ctrack)
    if not np.isfinite(score):
        raise NumericError("no state path has positive probability")
    return path, float(score)


def gamma_from(log_b, log_prior, log_trans, ctrack=None, mode: str = "smoothed") -> np.ndarray:
    if mode == "smoothed":
        return forward_backward(log_b, log_prior, log_trans, ctrack)[0]
    if mode == "viterbi":
        path, _ = viterbi_path(log_b, log_prior, log_trans, ctrack)
        gamma = np.zeros(log_b.shape)
        gamma[np.arange(path.size), path] = 1.0
        return gamma
    raise ValueError(f"unknown gamma mode {mode!r}; expected one of {GAMMA_MODES}")


def _model_tensors(model: DbnModel):
    return safe_log(model.prior)[None], safe_log(model.trans)[None]


def posterior_gamma(model: DbnModel, speech, mode: str = "smoothed") -> np.ndarray:
    """State posteriors given speech only, as a (T, N) matrix."""
    log_prior, log_trans = _model_tensors(model)
    return gamma_from(speech_loglik(model.states, speech), log_prior, log_trans, None, mode)


def synthesize(model: DbnModel, speech, mode: str = "smoothed") -> np.ndarray:
    """Expected motion per frame: posterior-weighted sum of state motion means."""
    return posterior_gamma(model, speech, mode) @ model.motion_means


def loglik_rate(model: DbnModel, sequences, observation: str = "full") -> float:
    """Total forward log-evidence divided by total frame count.

    ``sequences`` holds ``(speech, motion)`` pairs; ``observation="partial"``
    ignores the motion stream.
    """
    log_prior, log_trans = _model_tensors(model)
    total, frames = 0.0, 0
    for speech, motion in sequences:
        log_b = emission_loglik(model.states, speech, motion if observation == "full" else None)
        total += forward_backward(log_b, log_prior, log_trans)[1]
        frames += log_b.shape[0]
    return total / frames


def state_occupancy(model: DbnModel, sequences) -> np.ndarray:
    """Expected number of frames spent in each state under full observation."""
    log_prior, log_trans = _model_tensors(model)
    occ = np.zeros(model.n_states)
    for speech, motion in sequences:
        occ += forward_backward(emission_loglik(model.states, speech, motion), log_prior, log_trans)[0].sum(axis=0)
    return occ


# --------------------------------------------------------------------------
# EM


@dataclass
class EmResult:
    states: list
    prior: np.ndarray
    trans: np.ndarray
    history: list = field(default_factory=list)
    occupancy: np.ndarray | None = None
    respawns: list = field(default_factory=list)    # (iteration, state) pairs


def _estep(states, log_prior, log_trans, n_constraints, seq):
    speech, motion, ctrack = seq
    log_b = emission_loglik(states, speech, motion)
    gamma, loglik, alpha, beta = forward_backward(log_b, log_prior, log_trans, ctrack)
    counts = _kernels.xi_counts(np.ascontiguousarray(log_b), log_trans, ctrack, alpha, beta, loglik, n_constraints)
    return loglik, gamma, counts


def _weighted_gaussian(x, w, fallback: GaussianParams) -> GaussianParams:
    total = w.sum()
    mu = w @ x / total
    diff = x - mu
    cov = (diff * w[:, None]).T @ diff / total
    sym = 0.5 * (cov + cov.T)
    try:
        reg = regularize_cov(cov)
    except NumericError:
        _log.warning("covariance update failed; keeping previous parameters")
        return fallback
    new = GaussianParams(mu, reg)
    if reg is not sym and not np.array_equal(reg, sym):
        # the ridged update is no longer the M-step maximizer; only take it if it
        # does not lower this state's expected log-likelihood
        if w @ gaussian_logpdf(x, new) < w @ gaussian_logpdf(x, fallback):
            _log.debug("regularized covariance update rejected")
            return fallback
    return new


def _respawn(speech, motion, gamma, occupancy, i, fallback: GaussianState) -> GaussianState:
    """New parameters for starved state ``i`` from half of the busiest state's frames.

    The busiest state's hard cluster is split along its first principal axis
    and the starved state takes the upper half.
    """
    src = int(np.argmax(occupancy))
    _log.warning("state %d starved (occupancy %.2e); respawning from state %d", i, occupancy[i], src)
    members = np.flatnonzero(np.argmax(gamma, axis=1) == src)
    joint = np.hstack([speech[members], motion[members]])
    if members.size < 2 * (joint.shape[1] + 1):
        return fallback
    centred = joint - joint.mean(axis=0)
    axis = np.linalg.svd(centred, full_matrices=False)[2][0]
    half = members[centred @ axis > 0]
    try:
        return GaussianState(GaussianParams.fit(speech[half]), GaussianParams.fit(motion[half]))
    except NumericError:
        return fallback


def _reopen(prior, trans, row_free, i):
    """Make a respawned state reachable again inside every support that holds it."""
    for k in np.flatnonzero(row_free[:, i]):
        support = row_free[k]
        floor = 1.0 / support.sum()
        trans[k, support, i] = np.maximum(trans[k, support, i], floor)
        trans[k, support] /= trans[k, support].sum(axis=1, keepdims=True)
        prior[k, i] = max(prior[k, i], floor)
        prior[k] /= prior[k].sum()


def run_em(states, prior, trans, sequences, *, row_free=None, max_iter: int = 50, tol: float = 1e-4,
           freeze_gaussians: bool = False, threads: int = 1,
           min_row_count: float = MIN_ROW_COUNT) -> EmResult:
    """Baum-Welch over a (K, N, N) transition tensor.

    ``sequences`` holds ``(speech, motion, ctrack)`` triples with integer
    constraint tracks. Transition rows are re-estimated only where
    ``row_free[k, i]`` is set and the expected number of transitions out of
    ``i`` under ``k`` exceeds ``min_row_count``; other rows are left alone, so
    zeros in the tensor stay exactly zero. Gaussians are pooled over all
    constraints. The returned history holds the log-likelihood rate seen at
    each E-step; the returned parameters are those of the last E-step.

    A state whose occupancy falls below ``STARVATION`` is respawned once per
    run (recorded in ``respawns``); the step after a respawn is the only place
    the history may go down. A state that starves again keeps its parameters.
    """
    states = list(states)
    prior = np.array(prior, dtype=float)
    trans = np.array(trans, dtype=float)
    K, N, _ = trans.shape
    if row_free is None:
        row_free = np.ones((K, N), dtype=bool)
    seqs = [(np.asarray(s, float), np.asarray(m, float), _as_track(c, len(s))) for s, m, c in sequences]
    if not seqs:
        raise ValueError("need at least one training sequence")
    speech_all = np.concatenate([s for s, _, _ in seqs])
    motion_all = np.concatenate([m for _, m, _ in seqs])
    n_frames = speech_all.shape[0]
    history = []
    respawns = []
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    occupancy = None
    try:
        for it in range(max_iter):
            log_prior, log_trans = safe_log(prior), safe_log(trans)
            job = lambda seq: _estep(states, log_prior, log_trans, K, seq)  # noqa: E731
            results = list(pool.map(job, seqs)) if pool else [job(q) for q in seqs]
            llr = sum(r[0] for r in results) / n_frames
            history.append(llr)
            gamma_all = np.concatenate([r[1] for r in results])
            occupancy = gamma_all.sum(axis=0)
            just_respawned = bool(respawns) and respawns[-1][0] == it - 1
            if len(history) > 1 and history[-1] - history[-2] < tol and not just_respawned:
                break
            if it == max_iter - 1:
                break

            start = np.zeros((K, N))
            counts = np.zeros((K, N, N))
            for (_, _, ctrack), (_, gamma, xi) in zip(seqs, results):
                start[ctrack[0]] += gamma[0]
                counts += xi
            for k in range(K):
                if start[k].sum() > 0:
                    prior[k] = start[k] / start[k].sum()
                rows = counts[k].sum(axis=1)
                upd = row_free[k] & (rows > min_row_count)
                trans[k, upd] = counts[k, upd] / rows[upd, None]

            if not freeze_gaussians:
                new_states = []
                for i, old in enumerate(states):
                    if occupancy[i] < STARVATION:
                        if any(j == i for _, j in respawns):
                            new_states.append(old)
                        else:
                            new_states.append(_respawn(speech_all, motion_all, gamma_all, occupancy, i, old))
                            respawns.append((it, i))
                            _reopen(prior, trans, row_free, i)
                        continue
                    w = gamma_all[:, i]
                    new_states.append(GaussianState(
                        _weighted_gaussian(speech_all, w, old.speech),
                        _weighted_gaussian(motion_all, w, old.motion),
                    ))
                states = new_states
    finally:
        if pool:
            pool.shutdown()
    return EmResult(states, prior, trans, history, occupancy, respawns)


def em_train(model: DbnModel, sequences, max_iter: int = 50, tol: float = 1e-4, threads: int = 1,
             freeze_gaussians: bool = False) -> tuple[DbnModel, list]:
    """Fit ``model`` to ``(speech, motion)`` pairs by EM with full observations.

    Returns the trained model and the per-iteration log-likelihood rates,
    which EM keeps non-decreasing.
    """
    seqs = [(s, m, None) for s, m in sequences]
    res = run_em(model.states, model.prior[None], model.trans[None], seqs, max_iter=max_iter, tol=tol,
                 threads=threads, freeze_gaussians=freeze_gaussians)
    return DbnModel(res.states, res.trans[0], res.prior[0]), res.history


def train_baseline(sequences, n_states: int, *, init: str = "vq", max_iter: int = 50, tol: float = 1e-4,
                   seed: int = 0, threads: int = 1) -> tuple[DbnModel, list]:
    """Initialize states from the pooled frames and run EM."""
    from .vq import init_states

    speech = np.concatenate([np.asarray(s, float) for s, _ in sequences])
    motion = np.concatenate([np.asarray(m, float) for _, m in sequences])
    states = init_states(np.hstack([speech, motion]), n_states, speech.shape[1], method=init, rng=seed)
    return em_train(DbnModel.ergodic(states), sequences, max_iter=max_iter, tol=tol, threads=threads)


__all__ = [
    "GaussianState", "DbnModel", "obs_logprob", "posterior_gamma", "synthesize", "loglik_rate",
    "em_train", "train_baseline", "run_em", "forward_backward", "viterbi_path", "state_occupancy",
]

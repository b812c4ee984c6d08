"""Small model builders and samplers shared by the tests."""
import numpy as np

from gesturesynth.dbn import DbnModel, GaussianState
from gesturesynth.statmath import GaussianParams


def gstate(speech_mean, motion_mean, s_var=1.0, m_var=1.0):
    sm = np.atleast_1d(np.asarray(speech_mean, float))
    mm = np.atleast_1d(np.asarray(motion_mean, float))
    return GaussianState(GaussianParams(sm, s_var * np.eye(sm.size)), GaussianParams(mm, m_var * np.eye(mm.size)))


def random_model(rng, n_states, ds=2, dm=1):
    states = []
    for _ in range(n_states):
        a = rng.normal(0, 0.5, (ds, ds))
        b = rng.normal(0, 0.5, (dm, dm))
        states.append(GaussianState(GaussianParams(rng.normal(0, 2, ds), a @ a.T + 0.5 * np.eye(ds)),
                                    GaussianParams(rng.normal(0, 2, dm), b @ b.T + 0.5 * np.eye(dm))))
    trans = rng.dirichlet(np.ones(n_states) * 2, size=n_states)
    return DbnModel(states, trans, rng.dirichlet(np.ones(n_states)))


def sample_sequence(rng, states, trans, prior, ctrack):
    """Draw (speech, motion, path) from a constraint-indexed chain.

    ``trans`` is (K, N, N), ``prior`` is (K, N); the move into frame t uses
    ``trans[ctrack[t]]``.
    """
    T = len(ctrack)
    path = np.empty(T, dtype=int)
    path[0] = rng.choice(len(states), p=prior[ctrack[0]])
    for t in range(1, T):
        path[t] = rng.choice(len(states), p=trans[ctrack[t], path[t - 1]])
    speech = np.array([rng.multivariate_normal(states[i].speech.mean, states[i].speech.cov) for i in path])
    motion = np.array([rng.multivariate_normal(states[i].motion.mean, states[i].motion.cov) for i in path])
    return speech, motion, path

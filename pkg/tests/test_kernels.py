"""The numba kernels and their numpy twins must agree."""
import numpy as np
import pytest

from gesturesynth import _kernels as K
from oracles import random_log_model

pytestmark = pytest.mark.skipif(not K.HAS_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("seed", range(10))
def test_hmm_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    log_b, log_prior, log_trans, ctrack = random_log_model(rng, 40, 5, K=3, sparsity=0.4)
    a_np = K.forward_numpy(log_b, log_prior, log_trans, ctrack)
    a_nb = K.forward_numba(log_b, log_prior, log_trans, ctrack)
    np.testing.assert_allclose(a_nb, a_np, rtol=1e-12, atol=1e-12)
    b_np = K.backward_numpy(log_b, log_trans, ctrack)
    b_nb = K.backward_numba(log_b, log_trans, ctrack)
    np.testing.assert_allclose(b_nb, b_np, rtol=1e-12, atol=1e-12)
    ll = float(np.logaddexp.reduce(a_np[-1]))
    x_np = K.xi_counts_numpy(log_b, log_trans, ctrack, a_np, b_np, ll, 3)
    x_nb = K.xi_counts_numba(log_b, log_trans, ctrack, a_np, b_np, ll, 3)
    np.testing.assert_allclose(x_nb, x_np, rtol=1e-10, atol=1e-12)
    p_np, s_np = K.viterbi_numpy(log_b, log_prior, log_trans, ctrack)
    p_nb, s_nb = K.viterbi_numba(log_b, log_prior, log_trans, ctrack)
    assert np.array_equal(p_np, p_nb)
    assert s_nb == pytest.approx(s_np, abs=1e-10)


def test_xi_counts_total_transitions(rng):
    log_b, log_prior, log_trans, ctrack = random_log_model(rng, 30, 4, K=2)
    a = K.forward_numpy(log_b, log_prior, log_trans, ctrack)
    b = K.backward_numpy(log_b, log_trans, ctrack)
    ll = float(np.logaddexp.reduce(a[-1]))
    xi = K.xi_counts(log_b, log_trans, ctrack, a, b, ll, 2)
    # one expected transition per frame after the first, booked under that frame's constraint
    assert xi.sum() == pytest.approx(29, abs=1e-9)
    for k in range(2):
        assert xi[k].sum() == pytest.approx(np.sum(ctrack[1:] == k), abs=1e-9)


def test_dtak_and_assign_agree(rng):
    for _ in range(10):
        a = rng.normal(size=(rng.integers(1, 30), 3))
        b = rng.normal(size=(rng.integers(1, 30), 3))
        assert K.dtak_numba(a, b, 0.7) == pytest.approx(K.dtak_numpy(a, b, 0.7), abs=1e-13)
    data = rng.normal(size=(500, 4))
    cents = rng.normal(size=(7, 4))
    l1, d1 = K.assign_numpy(data, cents)
    l2, d2 = K.assign_numba(data, cents)
    assert np.array_equal(l1, l2)
    np.testing.assert_allclose(d1, d2, rtol=1e-12)


def test_backend_flag_reported():
    assert K.BACKEND in ("numba", "numpy")
    assert (K.BACKEND == "numba") == K.USE_NUMBA

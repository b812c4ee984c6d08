import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesturesynth import statmath as S
from oracles import direct_logpdf, kruskal_h_by_hand, monte_carlo_kl


def _random_spd(rng, d, floor=0.3):
    a = rng.normal(0, 0.7, (d, d))
    return a @ a.T + floor * np.eye(d)


def test_logpdf_standard_normal_constants():
    assert S.gaussian_logpdf(np.zeros(1), S.GaussianParams(np.zeros(1), np.eye(1))) == pytest.approx(
        -0.5 * np.log(2 * np.pi), abs=1e-15)
    assert S.gaussian_logpdf(np.zeros(2), S.GaussianParams(np.zeros(2), np.eye(2))) == pytest.approx(
        -np.log(2 * np.pi), abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_logpdf_matches_direct_formula(seed):
    rng = np.random.default_rng(seed)
    g = S.GaussianParams(rng.normal(size=3), _random_spd(rng, 3))
    x = rng.normal(size=3)
    assert S.gaussian_logpdf(x, g) == pytest.approx(direct_logpdf(x, g.mean, g.cov), abs=1e-10)


def test_logpdf_vectorized_rows(rng):
    g = S.GaussianParams(rng.normal(size=2), _random_spd(rng, 2))
    xs = rng.normal(size=(7, 2))
    np.testing.assert_allclose(S.gaussian_logpdf(xs, g), [direct_logpdf(x, g.mean, g.cov) for x in xs], atol=1e-10)


def test_gaussian_params_validation():
    with pytest.raises(ValueError):
        S.GaussianParams(np.zeros(2), np.eye(3))
    with pytest.raises(ValueError):
        S.GaussianParams(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_fit_is_ml_estimate(rng):
    x = rng.normal(size=(200, 3))
    g = S.GaussianParams.fit(x)
    assert np.allclose(g.mean, x.mean(axis=0))
    assert np.allclose(g.cov, np.cov(x.T, bias=True))


def test_safe_cholesky_regularizes_singular():
    c = np.array([[1.0, 1.0], [1.0, 1.0]])
    low = S.safe_cholesky(c)
    assert np.allclose(low @ low.T, c + 1e-6 * np.eye(2))
    with pytest.raises(S.NumericError):
        S.safe_cholesky(-np.eye(2))


def test_kl_identity_and_analytic_shift():
    p = S.GaussianParams(np.zeros(1), np.eye(1))
    assert S.kl_gaussian(p, p) == pytest.approx(0.0, abs=1e-12)
    assert S.kl_gaussian(p, S.GaussianParams(np.ones(1), np.eye(1))) == pytest.approx(0.5, abs=1e-12)


def test_kl_variance_ratio_uses_log_det():
    # KL(N(0,1) || N(0,4)) = 0.5 * (1/4 - 1 + ln 4)
    p = S.GaussianParams(np.zeros(1), np.eye(1))
    q = S.GaussianParams(np.zeros(1), 4 * np.eye(1))
    assert S.kl_gaussian(p, q) == pytest.approx(0.5 * (0.25 - 1 + np.log(4)), abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_kl_matches_monte_carlo_d2(seed):
    rng = np.random.default_rng(seed)
    mp, mq = rng.normal(size=2), rng.normal(size=2)
    cp, cq = _random_spd(rng, 2, 0.5), _random_spd(rng, 2, 0.5)
    ref = monte_carlo_kl(mp, cp, mq, cq, seed=seed)
    assert S.kl_gaussian(S.GaussianParams(mp, cp), S.GaussianParams(mq, cq)) == pytest.approx(ref, abs=1e-2)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_kl_nonnegative_and_symmetric_kl_symmetric(seed, d):
    rng = np.random.default_rng(seed)
    p = S.GaussianParams(rng.normal(size=d), _random_spd(rng, d))
    q = S.GaussianParams(rng.normal(size=d), _random_spd(rng, d))
    assert S.kl_gaussian(p, q) >= 0
    assert S.symmetric_kl(p, q) == pytest.approx(S.symmetric_kl(q, p), rel=1e-12)


def test_cca_self_and_affine(rng):
    x = rng.normal(size=(300, 3))
    assert np.allclose(S.cca(x, x), 1.0, atol=1e-6)
    a = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    assert np.allclose(S.cca(x, x @ a + 5.0), 1.0, atol=1e-6)


def test_cca_scalar_is_abs_pearson(rng):
    x = rng.normal(size=400)
    y = -0.4 * x + rng.normal(size=400)
    xc, yc = x - x.mean(), y - y.mean()
    pearson = np.sum(xc * yc) / np.sqrt(np.sum(xc ** 2) * np.sum(yc ** 2))
    assert S.cca(x, y)[0] == pytest.approx(abs(pearson), abs=1e-10)


def test_cca_rank_deficient_falls_back_to_ridge(rng):
    x = rng.normal(size=(100, 2))
    rho = S.cca(x, np.column_stack([x, x[:, 0]]))
    assert np.allclose(rho, 1.0, atol=1e-6)


@given(st.integers(0, 10_000))
def test_cca_bounded_and_sorted(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 3))
    y = rng.normal(size=(60, 2)) + 0.3 * x[:, :2]
    rho = S.cca(x, y)
    assert rho.shape == (2,)
    assert np.all((0 <= rho) & (rho <= 1)) and np.all(np.diff(rho) <= 1e-12)


def test_cca_too_few_rows():
    with pytest.raises(ValueError):
        S.cca(np.zeros((3, 3)), np.zeros((3, 1)))


def test_linf_examples():
    a = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert S.linf_distance(a, a) == 0.0
    assert S.linf_distance([[1.0, 0.0]], [[0.0, 1.0]]) == 1.0
    with pytest.raises(ValueError):
        S.linf_distance(np.eye(2), np.eye(3))


def test_kruskal_matches_hand_formula():
    groups = [np.array([1.0, 2, 3]), np.array([4.0, 5, 6])]
    h, p = S.kruskal_wallis(groups)
    assert h == pytest.approx(kruskal_h_by_hand(groups), abs=1e-12)
    assert 0 < p < 0.1


def test_kruskal_with_ties_matches_hand_formula():
    groups = [np.array([1.0, 2, 2, 3]), np.array([2.0, 3, 3, 4, 5])]
    assert S.kruskal_wallis(groups)[0] == pytest.approx(kruskal_h_by_hand(groups), abs=1e-12)


def test_kruskal_all_ties():
    assert S.kruskal_wallis([np.full(4, 2.0), np.full(5, 2.0)]) == (0.0, 1.0)


def test_kruskal_null_calibration():
    rng = np.random.default_rng(2024)
    rejections = sum(S.kruskal_wallis([rng.normal(size=100) for _ in range(3)])[1] < 0.05 for _ in range(1000))
    assert 0.03 <= rejections / 1000 <= 0.07


def test_dunn_sidak_examples(rng):
    g = rng.normal(size=40)
    assert S.dunn_sidak_pairs([g, g.copy()]) == []
    groups = [rng.normal(size=40), rng.normal(size=40), rng.normal(size=40) + 100]
    assert S.dunn_sidak_pairs(groups) == [(0, 2), (1, 2)]


def test_dunn_single_pair_is_uncorrected(rng):
    # with one pair the Sidak level equals alpha; compare with the bare z test
    from scipy import stats

    a, b = rng.normal(size=30), rng.normal(size=30) + 0.55
    pooled = np.concatenate([a, b])
    r = stats.rankdata(pooled)
    n = 60
    z = (r[:30].mean() - r[30:].mean()) / np.sqrt(n * (n + 1) / 12 * (2 / 30))
    p = 2 * stats.norm.sf(abs(z))
    for alpha in (0.01, 0.05, 0.2):
        assert (S.dunn_sidak_pairs([a, b], alpha) == [(0, 1)]) == (p < alpha)


def test_behavior_histograms_normalized():
    h = S.behavior_histograms(["q", "q", "s", "s", "s"], ["nod", "none", "nod", "nod", "shake"])
    assert h["q"] == {"nod": 0.5, "none": 0.5, "shake": 0.0}
    assert all(sum(v.values()) == pytest.approx(1.0) for v in h.values())

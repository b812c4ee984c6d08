"""Acceptance suite: one check per numbered criterion.

Each ``criterion_N`` returns ``(ok, detail)``. Under pytest every criterion
prints one ``PASS``/``FAIL`` line and asserts; ``python tests/test_acceptance.py``
runs them all and prints the same lines.
"""
import functools
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import pdist

sys.path.insert(0, str(Path(__file__).parent))

from gesturesynth import cdbn, cli, corpus, dbn, evaluate, retrieval, smooth  # noqa: E402
from gesturesynth.statmath import GaussianParams, cca, kl_gaussian, linf_distance  # noqa: E402
from helpers import random_model, sample_sequence  # noqa: E402
from oracles import brute_force_posteriors, monte_carlo_kl, random_log_model  # noqa: E402

N_STATES = 8
TRAIN_TURNS = 30


@functools.lru_cache(maxsize=None)
def _gesture_corpus(seed: int, n_turns: int):
    return corpus.generate_synthetic(corpus.SyntheticSpec.head_gestures(n_turns=n_turns, seed=seed))


@functools.lru_cache(maxsize=None)
def _sparse_and_shared():
    ds = _gesture_corpus(1, TRAIN_TURNS + 60)
    seqs = [t.triple() for t in ds.turns[:TRAIN_TURNS]]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sparse, _ = cdbn.train_cdbn(seqs, ds.constraints, N_STATES)
        shared, _ = cdbn.train_shared(seqs, ds.constraints, N_STATES)
    return ds, sparse, shared


# --------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        T, N, K = int(rng.integers(1, 7)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        log_b, log_prior, log_trans, ctrack = random_log_model(rng, T, N, K, sparsity=0.3)
        gamma, ll, _, _ = dbn.forward_backward(log_b, log_prior, log_trans, ctrack)
        path, _ = dbn.viterbi_path(log_b, log_prior, log_trans, ctrack)
        g_ref, ll_ref, best = brute_force_posteriors(log_b, log_prior, log_trans, ctrack)
        worst = max(worst, np.abs(gamma - g_ref).max(), abs(ll - ll_ref))
        if not np.array_equal(path, best):
            return False, f"viterbi path differs on case {seed}"
    elapsed = time.perf_counter() - t0
    return worst <= 1e-10 and elapsed < 10, f"max abs error {worst:.2e}, {elapsed:.2f} s"


def _random_dataset(seed):
    rng = np.random.default_rng(1000 + seed)
    truth = random_model(rng, 3)
    trans = np.stack([truth.trans, rng.dirichlet(np.ones(3) * 2, size=3)])
    prior = np.stack([truth.prior, truth.prior])
    seqs = []
    for _ in range(3):
        track = np.repeat(rng.integers(0, 2, 4), 50)
        sp, mo, _ = sample_sequence(rng, truth.states, trans, prior, track)
        seqs.append((sp, mo, np.array(["a", "b"], dtype=object)[track]))
    return rng, seqs


def criterion_2():
    t0 = time.perf_counter()
    worst, respawn_steps = 0.0, 0
    for seed in range(20):
        rng, seqs = _random_dataset(seed)
        init = random_model(rng, 3)
        base = dbn.run_em(init.states, init.prior[None], init.trans[None],
                          [(s, m, None) for s, m, _ in seqs], max_iter=50, tol=-np.inf)
        model = cdbn.initialize(seqs, ("a", "b"), 2, em_iter=5)
        enc = [(s, m, cdbn.encode_track(model.constraints, c)) for s, m, c in seqs]
        con = dbn.run_em(model.states, model.priors, model.trans, enc, row_free=model.mask,
                         max_iter=50, tol=-np.inf)
        for res in (base, con):
            if len(res.history) != 50:
                return False, f"seed {seed}: {len(res.history)} iterations instead of 50"
            skip = {it for it, _ in res.respawns}
            respawn_steps += len(skip)
            drops = [-d for j, d in enumerate(np.diff(res.history)) if j not in skip]
            worst = max(worst, max(drops))
    elapsed = time.perf_counter() - t0
    detail = f"largest decrease {worst:.2e}, respawn steps excluded {respawn_steps}, {elapsed:.1f} s"
    return worst <= 1e-8 and elapsed < 120, detail


def criterion_3():
    rng = np.random.default_rng(3)
    base = random_model(rng, 4, ds=2, dm=3)
    seqs = [(rng.normal(size=(80, 2)), rng.normal(size=(80, 3))) for _ in range(3)]
    m1, h1 = dbn.em_train(base, seqs, max_iter=10, threads=1)
    c1, h2 = cdbn.constrained_em(cdbn.CdbnModel.from_dbn(base), [(s, m, ["other"] * len(s)) for s, m in seqs],
                                 max_iter=10, threads=1)
    probe = rng.normal(size=(120, 2))
    same = h1 == h2
    for mode in dbn.GAMMA_MODES:
        same &= np.array_equal(dbn.posterior_gamma(m1, probe, mode),
                               cdbn.constrained_posterior(c1, probe, ["other"] * 120, mode))
        same &= np.array_equal(dbn.synthesize(m1, probe, mode),
                               cdbn.constrained_synthesize(c1, probe, ["other"] * 120, mode))
    return bool(same), "histories, gammas and trajectories bit-equal" if same else "mismatch"


def criterion_4():
    t0 = time.perf_counter()
    ds, sparse, shared = _sparse_and_shared()
    k = {c: i for i, c in enumerate(ds.constraints)}
    d_sparse = linf_distance(sparse.trans[k["nod"]], sparse.trans[k["shake"]])
    d_shared = linf_distance(shared.trans[k["nod"]], shared.trans[k["shake"]])
    elapsed = time.perf_counter() - t0
    ok = d_sparse >= 10 * d_shared and elapsed < 300
    return ok, f"sparse {d_sparse:.4f}, shared {d_shared:.4f}, {elapsed:.0f} s"


def criterion_5():
    ds, sparse, _ = _sparse_and_shared()
    held_out = [t.speech for t in ds.turns[TRAIN_TURNS:]]
    acc = {g: evaluate.gesture_accuracy(sparse, held_out, g) for g in ("nod", "shake")}
    ok = all(a >= 0.8 for a in acc.values())
    return ok, ", ".join(f"{g} {a:.3f}" for g, a in acc.items()) + f" over {len(held_out)} turns each"


def criterion_6():
    kb, kc = [], []
    for seed in range(5):
        ds = _gesture_corpus(seed, 40)
        train, test = ds.turns[:TRAIN_TURNS], ds.turns[TRAIN_TURNS:]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            base, _ = dbn.train_baseline([(t.speech, t.motion) for t in train], N_STATES, max_iter=30)
            model, _ = cdbn.train_cdbn([t.triple() for t in train], ds.constraints, N_STATES)
        orig = np.concatenate([t.motion for t in test])
        kb.append(evaluate.kld_metric(orig, np.concatenate([dbn.synthesize(base, t.speech) for t in test])))
        kc.append(evaluate.kld_metric(orig, np.concatenate(
            [cdbn.constrained_synthesize(model, t.speech, t.constraints) for t in test])))
    ratio = np.mean(kc) / np.mean(kb)
    return ratio <= 0.75, f"mean KLD baseline {np.mean(kb):.4f}, constrained {np.mean(kc):.4f}, ratio {ratio:.3f}"


def criterion_7():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(400, 3))
    self_err = abs(evaluate.cca_m(x, x) - 1.0)
    a = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    y = x[:, :2] + 0.5 * rng.normal(size=(400, 2))
    affine_err = np.abs(cca(x @ a + rng.normal(size=3), y @ a[:2, :2] - 4.0) - cca(x, y)).max()
    kl_self, mc_err = 0.0, 0.0
    for i in range(20):
        d = 1 + i % 3
        mp, mq = rng.normal(size=d), rng.normal(size=d)
        bp, bq = rng.normal(0, 0.5, (d, d)), rng.normal(0, 0.5, (d, d))
        cp, cq = bp @ bp.T + 0.5 * np.eye(d), bq @ bq.T + 0.5 * np.eye(d)
        p, q = GaussianParams(mp, cp), GaussianParams(mq, cq)
        kl_self = max(kl_self, abs(kl_gaussian(p, p)))
        mc_err = max(mc_err, abs(kl_gaussian(p, q) - monte_carlo_kl(mp, cp, mq, cq, seed=i)))
    ok = self_err <= 1e-6 and affine_err <= 1e-6 and kl_self <= 1e-9 and mc_err <= 1e-2
    return ok, (f"cca self {self_err:.1e}, affine {affine_err:.1e}, "
                f"kl self {kl_self:.1e}, Monte-Carlo gap {mc_err:.1e}")


def criterion_8():
    spreads = []
    for seed in range(5):
        ds = _gesture_corpus(seed, 20)
        pairs = [(t.speech, t.motion) for t in ds.turns]
        row = []
        for init in ("vq", "random"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                m, _ = dbn.train_baseline(pairs, N_STATES, init=init, max_iter=20, seed=seed)
            row.append(pdist(m.motion_means).mean())
        spreads.append(row)
    ok = all(v > r for v, r in spreads)
    return ok, "vq/random spread " + ", ".join(f"{v:.2f}/{r:.2f}" for v, r in spreads)


def criterion_9():
    rng = np.random.default_rng(9)
    key_err, norm_err, fixed_err = 0.0, 0.0, 0.0
    for region, d in (("head", 3), ("hand", 10)):
        plan = smooth.KeypointPlan.for_region(region)
        for _ in range(10):
            traj = np.cumsum(rng.normal(0, 3, (int(rng.integers(20, 400)), d)), axis=0)
            out, quats = smooth.smooth_trajectory(traj, plan, return_quaternions=True)
            k = smooth.keypoint_indices(len(traj), plan)
            key_err = max(key_err, np.abs(out[k] - traj[k]).max())
            norm_err = max(norm_err, max(np.abs(np.linalg.norm(q, axis=-1) - 1).max() for q in quats))
        const = np.tile(rng.uniform(-60, 60, d), (150, 1))
        fixed_err = max(fixed_err, np.abs(smooth.smooth_trajectory(const, plan) - const).max())
    ok = key_err <= 1e-6 and norm_err <= 1e-9 and fixed_err <= 1e-6
    return ok, f"keypoint error {key_err:.1e}, quaternion norm error {norm_err:.1e}, constant drift {fixed_err:.1e}"


def _planted_turn(rng, tid, subject, n_plants=3, T=900):
    x = np.cumsum(rng.normal(0, 0.15, (T, 3)), axis=0)
    x -= x.mean(axis=0)
    lab = np.full(T, "other", dtype=object)
    starts = []
    for s in np.linspace(100, T - 160, n_plants).astype(int):
        s += int(rng.integers(-30, 30))
        x[s:s + 60, 0] += 10 * np.sin(2 * np.pi * np.arange(60) / 30)
        lab[s:s + 60] = "nod"
        starts.append(s)
    return (tid, subject, x, lab), starts


def criterion_10():
    rng = np.random.default_rng(10)
    self_err, sym_err = 0.0, 0.0
    for _ in range(100):
        a = rng.normal(size=(int(rng.integers(1, 40)), 3))
        b = rng.normal(size=(int(rng.integers(1, 40)), 3))
        self_err = max(self_err, abs(retrieval.dtak(a, a, 1.0) - 1.0))
        sym_err = max(sym_err, abs(retrieval.dtak(a, b, 1.0) - retrieval.dtak(b, a, 1.0)))
    turns = [_planted_turn(rng, f"t{i}", f"s{i % 2}") for i in range(16)]
    (_, _, m0, _), s0 = turns[0]
    (_, _, m1, _), s1 = turns[1]
    ex = {"nod": [m0[s0[0]:s0[0] + 60], m0[s0[1]:s0[1] + 60], m1[s1[0]:s1[0] + 60]]}
    cfg = retrieval.RetrievalConfig(scales=(10, 20, 30))
    retrieval.calibrate([t for t, _ in turns[:8]], ex, cfg)
    _, report = retrieval.retrieve([t for t, _ in turns[8:]], ex, cfg)
    r = report["nod"]
    ok = self_err <= 1e-9 and sym_err <= 1e-12 and r["retrieved"] > 0 and r["precision"] >= 0.9
    return ok, (f"self {self_err:.1e}, symmetry {sym_err:.1e}, planted precision "
                f"{r['correct']}/{r['retrieved']}")


def criterion_11():
    ds = _gesture_corpus(11, 8)
    problems = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        path = corpus.save_dataset(ds, tmp / "ds")
        back = corpus.load_dataset(path)
        model, _ = cdbn.train_cdbn([t.triple() for t in back.turns], back.constraints, 2, em_iter=3,
                                   init_em_iter=3)
        corpus.save_model(model, tmp / "m.json")
        loaded = corpus.load_model(tmp / "m.json")
        probe = ds.turns[0]
        if not np.array_equal(cdbn.constrained_posterior(model, probe.speech, probe.constraints),
                              cdbn.constrained_posterior(loaded, probe.speech, probe.constraints)):
            problems.append("model gammas differ")
        if not all(np.array_equal(a.speech, b.speech) and np.array_equal(a.motion, b.motion)
                   for a, b in zip(ds.turns, back.turns)):
            problems.append("dataset differs")
        turn = sorted((path / "turns").iterdir())[0]
        text = (tmp / "m.json").read_text()
        cases = {
            "truncated model": lambda: (tmp / "m.json").write_text(text[: len(text) // 2]),
            "corrupted model": lambda: (tmp / "m.json").write_text(text.replace("0", "1", 1)),
        }
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for name, damage in cases.items():
                damage()
                code = cli.main(["synth", "--model", str(tmp / "m.json"), "--input", str(turn), "--out",
                                 str(tmp / "o")])
                if code == 0:
                    problems.append(f"{name} accepted")
            good = turn.read_bytes()
            damaged = (("truncated turn", good[: len(good) // 3]), ("corrupted turn", good.replace(b"1", b"2", 1)))
            for name, bad in damaged:
                turn.write_bytes(bad)
                code = cli.main(["train", "--dataset", str(path), "--out", str(tmp / "x.json"),
                                 "--constraint-mode", "none", "--states", "2", "--max-iter", "2"])
                if code == 0:
                    problems.append(f"{name} accepted")
            turn.write_bytes(good)
    return not problems, "; ".join(problems) or "round trips exact, damaged files rejected"


def criterion_12():
    problems = []
    for n in (10, 11, 57, 200):
        splits = corpus.tenfold_splits(n, seed=n)
        val = set(splits[0].validation)
        tests = [set(s.test) for s in splits]
        if any(a & b for i, a in enumerate(tests) for b in tests[i + 1:]):
            problems.append(f"n={n}: test folds overlap")
        if set().union(*tests) | val != set(range(n)):
            problems.append(f"n={n}: folds do not cover all turns")
        if any(val & t for t in tests):
            problems.append(f"n={n}: validation fold used for testing")
        for s in splits:
            if set(s.train) & set(s.test) or set(s.train) | set(s.test) != set(range(n)):
                problems.append(f"n={n}: train/test not complementary")
            if not val <= set(s.train):
                problems.append(f"n={n}: validation fold not rejoined to training")
    return not problems, "; ".join(sorted(set(problems))) or "partition, exclusion and rejoin hold"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


def line(fn, ok, detail) -> str:
    return f"{'PASS' if ok else 'FAIL'} criterion {fn.__name__.split('_')[1]}: {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("fn", CRITERIA, ids=lambda f: f.__name__)
def test_criterion(fn, capsys):
    ok, detail = fn()
    with capsys.disabled():
        print("\n" + line(fn, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for fn in CRITERIA:
        ok, detail = fn()
        print(line(fn, ok, detail), flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)

"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--frames 5000] [--states 25] [--repeat 5]

Both backends are imported from the same module, so the environment flag
does not matter here. The first numba call (JIT compile, or cache load) is
excluded from the timings.
"""
import argparse
import time

import numpy as np

from gesturesynth import _kernels as K


def _problem(T, N, n_constraints, rng):
    log_b = rng.normal(-5.0, 2.0, (T, N))
    trans = rng.dirichlet(np.ones(N), size=(n_constraints, N))
    prior = rng.dirichlet(np.ones(N), size=n_constraints)
    ctrack = rng.integers(0, n_constraints, T).astype(np.int64)
    return log_b, np.log(prior), np.log(trans), ctrack


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(T, N, rng):
    log_b, log_prior, log_trans, ctrack = _problem(T, N, 3, rng)

    def hmm(backend):
        fwd, bwd, xi = (getattr(K, f"{n}_{backend}") for n in ("forward", "backward", "xi_counts"))

        def run():
            a = fwd(log_b, log_prior, log_trans, ctrack)
            b = bwd(log_b, log_trans, ctrack)
            ll = float(np.logaddexp.reduce(a[-1]))
            xi(log_b, log_trans, ctrack, a, b, ll, 3)
        return run

    seg_a = rng.normal(size=(120, 3))
    seg_b = rng.normal(size=(90, 3))
    data = rng.normal(size=(20 * T, 9))
    cents = rng.normal(size=(32, 9))
    return {
        "forward-backward+xi": hmm,
        "viterbi": lambda be: lambda: getattr(K, f"viterbi_{be}")(log_b, log_prior, log_trans, ctrack),
        "dtak 120x90": lambda be: lambda: getattr(K, f"dtak_{be}")(seg_a, seg_b, 1.0),
        "vq assign": lambda be: lambda: getattr(K, f"assign_{be}")(data, cents),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=5000)
    ap.add_argument("--states", type=int, default=25)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        raise SystemExit("numba is not installed")
    rng = np.random.default_rng(0)
    print(f"T={args.frames} N={args.states}, best of {args.repeat}")
    print(f"{'kernel':<22}{'numpy s':>12}{'numba s':>12}{'speedup':>10}")
    for name, make in cases(args.frames, args.states, rng).items():
        make("numba")()  # compile / load cache
        t_np = _best(make("numpy"), args.repeat)
        t_nb = _best(make("numba"), args.repeat)
        print(f"{name:<22}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()

"""Command-line entry point.

Every option can come from a JSON config file (``--config``); keys are the
long flag names with dashes replaced by underscores, and flags given on the
command line win over the file.

Exit codes: 0 success, 1 usage error, 2 data error (missing/corrupt files,
bad labels, not enough data), 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import cdbn, corpus, dbn, evaluate, retrieval, smooth
from .features import FRAME_RATE, HAND_AXES, HEAD_AXES, motion_dim
from .statmath import NumericError

_log = logging.getLogger("gesturesynth")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONSTRAINT_MODES = ("none", "discourse", "gesture")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    dataset: str | None = None
    model: str | None = None
    out: str | None = None
    spec: str | None = None
    input: str | None = None
    exemplars: str | None = None
    log: str | None = None
    region: str = "head"
    constraint_mode: str = "gesture"
    states: int | None = None
    max_iter: int = 30
    tol: float = 1e-4
    gamma: str = "smoothed"
    head_rate: float = smooth.HEAD_RATE
    hand_rate: float = smooth.HAND_RATE
    splits: str = "tenfold"
    fold: int = 0
    candidates: str = "2,4,6,8,10,12"
    seed: int = 0
    threads: int = 1
    scales: str = "30,60,90,120"
    tolerance: float = 0.5
    radius: float = 3.0

    def validate(self):
        if self.region not in ("head", "hand"):
            raise UsageError(f"unknown region {self.region!r}")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise UsageError(f"unknown constraint mode {self.constraint_mode!r}")
        if self.gamma not in dbn.GAMMA_MODES:
            raise UsageError(f"unknown gamma mode {self.gamma!r}")
        if self.splits not in ("tenfold", "all"):
            raise UsageError(f"unknown split scheme {self.splits!r}")
        if self.states is not None and self.states < 1:
            raise UsageError("--states must be >= 1")
        if self.threads < 1 or self.max_iter < 1:
            raise UsageError("--threads and --max-iter must be >= 1")
        if not 0 <= self.fold < 9:
            raise UsageError("--fold must be in 0..8")
        return self

    def n_states(self) -> int:
        if self.states is not None:
            return self.states
        return cdbn.DEFAULT_STATES[(self.region, self.constraint_mode)]

    def keypoint_plan(self, region: str) -> smooth.KeypointPlan:
        return smooth.KeypointPlan(self.head_rate if region == "head" else self.hand_rate, FRAME_RATE)


# --------------------------------------------------------------------------
# helpers


def _require(cfg, *names):
    for n in names:
        if getattr(cfg, n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required for {cfg.command}")


def _write_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _publish_dir(build, path):
    path = Path(path)
    if path.exists():
        shutil.rmtree(path)
    os.replace(build, path)


def _staging_dir(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=".tmp-", dir=path.parent))


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _load_dataset(cfg) -> corpus.Dataset:
    ds = corpus.load_dataset(cfg.dataset)
    if ds.region != cfg.region:
        raise corpus.FormatError(f"dataset region is {ds.region!r} but --region is {cfg.region!r}")
    return ds


def _turn_sets(cfg, ds) -> tuple[list, list]:
    """(training turns, test turns) for the configured split scheme."""
    if cfg.splits == "all":
        return list(ds.turns), list(ds.turns)
    split = corpus.tenfold_splits(len(ds.turns), cfg.seed)[cfg.fold]
    return ds.subset(split.train), ds.subset(split.test)


def _train(cfg, turns, constraints, n_states):
    if cfg.constraint_mode == "none":
        return dbn.train_baseline([(t.speech, t.motion) for t in turns], n_states, max_iter=cfg.max_iter,
                                  tol=cfg.tol, seed=cfg.seed, threads=cfg.threads)
    return cdbn.train_cdbn([t.triple() for t in turns], constraints, n_states, em_iter=cfg.max_iter,
                           tol=cfg.tol, threads=cfg.threads)


def _synthesize(model, speech, track, gamma):
    if isinstance(model, cdbn.CdbnModel):
        if track is None:
            raise cdbn.ConstraintError("constrained model needs a constraint column in the input")
        return cdbn.constrained_synthesize(model, speech, track, gamma)
    return dbn.synthesize(model, speech, gamma)


def _region_of(model) -> str:
    d = model.states[0].motion.dim
    for region in ("head", "hand"):
        if motion_dim(region) == d:
            return region
    raise corpus.FormatError(f"model motion dimension {d} matches no region")


def _trajectory_tsv(traj, region) -> str:
    cols = HEAD_AXES if region == "head" else HAND_AXES
    lines = ["\t".join(("time",) + tuple(cols))]
    for i, row in enumerate(traj):
        lines.append("\t".join([repr(i / FRAME_RATE), *(repr(float(v)) for v in row)]))
    return "\n".join(lines) + "\n"


def _llr(model, turns) -> float:
    if isinstance(model, cdbn.CdbnModel):
        return cdbn.constrained_loglik_rate(model, [t.triple() for t in turns])
    return dbn.loglik_rate(model, [(t.speech, t.motion) for t in turns])


# --------------------------------------------------------------------------
# commands


def cmd_gen_corpus(cfg) -> int:
    _require(cfg, "spec", "out")
    try:
        raw = json.loads(Path(cfg.spec).read_text())
    except OSError as exc:
        raise corpus.FormatError(f"cannot read spec file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise corpus.FormatError(f"spec file is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise corpus.FormatError("spec file must hold a JSON object")
    raw.setdefault("seed", cfg.seed)
    raw.setdefault("region", cfg.region)
    try:
        spec = corpus.SyntheticSpec.from_dict(raw)
    except TypeError as exc:
        raise corpus.FormatError(f"bad spec: {exc}") from None
    ds = corpus.generate_synthetic(spec)
    path = corpus.save_dataset(ds, cfg.out)
    man = json.loads((path / "manifest.json").read_text())
    print(f"{len(ds.turns)} turns, {sum(len(t) for t in ds.turns)} frames, region {ds.region}, "
          f"constraints {','.join(ds.constraints)}, manifest {man['checksum']}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    _require(cfg, "dataset", "out")
    ds = _load_dataset(cfg)
    train, _ = _turn_sets(cfg, ds)
    n = cfg.n_states()
    model, history = _train(cfg, train, ds.constraints, n)
    meta = {"constraint_mode": cfg.constraint_mode, "region": ds.region, "n_states": n, "seed": cfg.seed,
            "splits": cfg.splits, "fold": cfg.fold, "llr_history": [float(h) for h in history]}
    corpus.save_model(model, cfg.out, meta)
    log_path = cfg.log or str(cfg.out) + ".log.tsv"
    _write_atomic(log_path, "iteration\tllr\n" + "".join(f"{i}\t{h!r}\n" for i, h in enumerate(history)))
    print(f"trained {type(model).__name__} with {model.n_states} states in {len(history)} iterations, "
          f"final LLR {history[-1]:.6f}")
    return EXIT_OK


def cmd_synth(cfg) -> int:
    _require(cfg, "model", "input", "out")
    model = corpus.load_model(cfg.model)
    region = _region_of(model)
    try:
        text = Path(cfg.input).read_text()
    except OSError as exc:
        raise corpus.FormatError(f"cannot read input: {exc}") from None
    speech, _, track = corpus.parse_turn_table(text, region)
    raw = _synthesize(model, speech, track, cfg.gamma)
    smoothed = smooth.smooth_trajectory(raw, cfg.keypoint_plan(region))
    build = _staging_dir(cfg.out)
    try:
        (build / "raw.tsv").write_text(_trajectory_tsv(raw, region))
        (build / "smoothed.tsv").write_text(_trajectory_tsv(smoothed, region))
        _publish_dir(build, cfg.out)
    except BaseException:
        shutil.rmtree(build, ignore_errors=True)
        raise
    print(f"wrote {raw.shape[0]} frames to {cfg.out}")
    return EXIT_OK


def cmd_eval(cfg) -> int:
    _require(cfg, "model", "dataset", "out")
    model = corpus.load_model(cfg.model)
    ds = _load_dataset(cfg)
    _, test = _turn_sets(cfg, ds)
    synth = [_synthesize(model, t.speech, t.constraints, cfg.gamma) for t in test]
    ccm = evaluate.per_turn_cca([(t.motion, s) for t, s in zip(test, synth)], evaluate.cca_m)
    ccs = evaluate.per_turn_cca([(s, t.speech) for t, s in zip(test, synth)], evaluate.cca_ms)
    orig = np.concatenate([t.motion for t in test])
    accuracy = {}
    if isinstance(model, cdbn.CdbnModel) and ds.region == "head":
        for g in evaluate.HEAD_DETECTORS:
            if g in model.constraints:
                accuracy[g] = evaluate.gesture_accuracy(model, [t.speech for t in test], g)
    report = evaluate.EvalReport(
        model=str(cfg.model), n_turns=len(test), cca_m=evaluate.summarize(ccm), cca_ms=evaluate.summarize(ccs),
        kld=evaluate.kld_metric(orig, np.concatenate(synth)), llr=_llr(model, test),
        per_turn=[{"turn": t.turn_id, "cca_m": a, "cca_ms": b} for t, a, b in zip(test, ccm, ccs)],
        gesture_accuracy=accuracy,
    )
    _write_atomic(cfg.out, report.to_json() + "\n")
    print(f"CCA_m {report.cca_m['mean']}, CCA_ms {report.cca_ms['mean']}, KLD {report.kld:.4f}, "
          f"LLR {report.llr:.4f} over {len(test)} turns")
    return EXIT_OK


def _read_exemplars(path, ds):
    try:
        raw = json.loads(Path(path).read_text() or "null")
    except OSError as exc:
        raise corpus.FormatError(f"cannot read exemplar file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise corpus.FormatError(f"exemplar file is not valid JSON: {exc}") from None
    if not isinstance(raw, dict) or not raw or not all(raw.values()):
        raise retrieval.RetrievalError("exemplar file is empty")
    by_id = {t.turn_id: t for t in ds.turns}
    out = {}
    for gesture, items in raw.items():
        segs = []
        for it in items:
            turn = by_id.get(it.get("turn"))
            if turn is None:
                raise corpus.FormatError(f"exemplar references unknown turn {it.get('turn')!r}")
            s, e = int(it["start"]), int(it["end"])
            if not 0 <= s < e <= len(turn):
                raise corpus.FormatError(f"exemplar range {s}:{e} is outside turn {turn.turn_id}")
            segs.append(turn.motion[s:e])
        out[gesture] = segs
    return out


def cmd_retrieve(cfg) -> int:
    _require(cfg, "dataset", "exemplars", "out")
    ds = _load_dataset(cfg)
    exemplars = _read_exemplars(cfg.exemplars, ds)
    rc = retrieval.RetrievalConfig(tuple(_ints(cfg.scales)), cfg.tolerance, None, cfg.radius)
    dev, rest = [], []
    for subject in ds.subjects:
        mine = [t for t in ds.turns if t.subject == subject]
        half = max(1, len(mine) // 2)
        dev += mine[:half]
        rest += mine[half:] or mine
    as_tuples = [(t.turn_id, t.subject, t.motion, t.constraints) for t in rest]
    retrieval.calibrate([(t.turn_id, t.subject, t.motion, t.constraints) for t in dev], exemplars, rc)
    kept, report = retrieval.retrieve(as_tuples, exemplars, rc)
    lines = ["turn\tstart\tend\tlabel\tscore"]
    lines += [f"{s.turn}\t{s.start}\t{s.end}\t{s.label}\t{s.score!r}" for s in kept]
    build = _staging_dir(cfg.out)
    try:
        (build / "segments.tsv").write_text("\n".join(lines) + "\n")
        (build / "report.json").write_text(json.dumps({"thresholds": rc.thresholds, "precision": report},
                                                      indent=2, sort_keys=True) + "\n")
        _publish_dir(build, cfg.out)
    except BaseException:
        shutil.rmtree(build, ignore_errors=True)
        raise
    for g, r in report.items():
        print(f"{g}: {r['correct']}/{r['retrieved']} correct")
    return EXIT_OK


def cmd_sweep_states(cfg) -> int:
    _require(cfg, "dataset", "out")
    ds = _load_dataset(cfg)
    tr_idx, va_idx = corpus.selection_split(len(ds.turns), cfg.seed)
    train, validation = ds.subset(tr_idx), ds.subset(va_idx)
    rows = evaluate.state_count_sweep(
        train, validation, _ints(cfg.candidates),
        trainer=lambda turns, n: _train(cfg, turns, ds.constraints, n)[0],
        synthesizer=lambda m, t: _synthesize(m, t.speech, t.constraints, cfg.gamma),
        llr=_llr,
    )
    build = _staging_dir(cfg.out)
    try:
        evaluate.write_sweep(rows, build / "sweep.tsv")
        os.replace(build / "sweep.tsv", cfg.out)
    finally:
        shutil.rmtree(build, ignore_errors=True)
    for r in rows:
        print(f"N={r['n_states']}\tLLR_val={r['llr_validation']:.4f}\tCCA_m={r['cca_m']}")
    return EXIT_OK


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "sweep-states": cmd_sweep_states,
}


# --------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # every default is None so that only flags actually given override the config file
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--dataset")
    common.add_argument("--model")
    common.add_argument("--out")
    common.add_argument("--region", choices=("head", "hand"))
    common.add_argument("--constraint-mode", choices=CONSTRAINT_MODES)
    common.add_argument("--states", type=int)
    common.add_argument("--max-iter", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--gamma", choices=dbn.GAMMA_MODES)
    common.add_argument("--head-rate", type=float, help="keypoints per second for head smoothing")
    common.add_argument("--hand-rate", type=float, help="keypoints per second for hand smoothing")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="gesturesynth", description="Speech-driven head and hand motion synthesis.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON synthetic corpus recipe")
    p = sub.add_parser("train", parents=[common], help="train a baseline or constrained model")
    p.add_argument("--log", help="per-iteration LLR table (default: <out>.log.tsv)")
    p.add_argument("--splits", choices=("tenfold", "all"))
    p.add_argument("--fold", type=int, help="ten-fold round whose training part is used")
    p = sub.add_parser("synth", parents=[common], help="synthesize motion for one turn table")
    p.add_argument("--input", help="turn TSV with speech columns and optional constraint column")
    p = sub.add_parser("eval", parents=[common], help="objective metrics on held-out turns")
    p.add_argument("--splits", choices=("tenfold", "all"))
    p.add_argument("--fold", type=int)
    p = sub.add_parser("retrieve", parents=[common], help="exemplar-based gesture retrieval")
    p.add_argument("--exemplars", help="JSON {gesture: [{turn, start, end}, ...]}")
    p.add_argument("--scales")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--radius", type=float)
    p = sub.add_parser("sweep-states", parents=[common], help="LLR and CCA versus number of states")
    p.add_argument("--candidates", help="comma-separated state counts")
    return parser


def resolve_config(argv) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    known = {f.name for f in fields(RunConfig)}
    values = {}
    if args.get("config"):
        try:
            file_cfg = json.loads(Path(args["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        unknown = set(file_cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_cfg)
    values.update({k: v for k, v in args.items() if k in known and v is not None})
    return RunConfig(**values).validate()


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = resolve_config(argv)
    except UsageError as exc:
        print(f"gesturesynth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TypeError as exc:
        print(f"gesturesynth: error: bad config value: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not logging.getLogger().isEnabledFor(logging.INFO):
        warnings.simplefilter("ignore")
    _log.info("config %s", asdict(cfg))
    try:
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"gesturesynth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"gesturesynth: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"gesturesynth: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

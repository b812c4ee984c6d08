"""Datasets, model files, cross-validation splits and the synthetic corpus.

Dataset layout (format version 1)::

    <dir>/manifest.json
    <dir>/turns/<turn_id>.tsv

Each turn file is tab separated with a header row; one row per 120 fps
frame: ``time``, the six speech columns, the motion columns (degrees) and the
``constraint`` label. Floats are written with ``repr`` so they round-trip
exactly. The manifest lists every turn with its SHA-256 and carries its own
checksum over the canonical JSON of all other fields.

Model files are JSON with the same checksum scheme; arrays are stored as
``{"shape": [...], "data": [...]}``. Readers accept only the versions in
``*_VERSIONS`` and fail loudly on anything else.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .features import (FRAME_RATE, HAND_AXES, HEAD_AXES, SPEECH_COLUMNS, ProsodyContour, motion_dim,
                       speech_features, znorm_per_subject)

DATASET_FORMAT = "gesturesynth-dataset"
MODEL_FORMAT = "gesturesynth-model"
DATASET_VERSIONS = (1,)
MODEL_VERSIONS = (1,)


class FormatError(ValueError):
    """File is malformed, corrupted, or of an unsupported version."""


@dataclass
class TurnRecord:
    turn_id: str
    subject: str
    speech: np.ndarray
    motion: np.ndarray
    constraints: np.ndarray
    region: str = "head"

    def __post_init__(self):
        self.speech = np.asarray(self.speech, dtype=float)
        self.motion = np.asarray(self.motion, dtype=float)
        self.constraints = np.asarray(self.constraints, dtype=object)
        n = self.speech.shape[0]
        if self.motion.shape[0] != n or self.constraints.shape[0] != n:
            raise ValueError(f"turn {self.turn_id}: streams have different lengths")
        if self.motion.shape[1] != motion_dim(self.region):
            raise ValueError(f"turn {self.turn_id}: motion has {self.motion.shape[1]} columns for {self.region}")

    def __len__(self):
        return self.speech.shape[0]

    def triple(self):
        return self.speech, self.motion, self.constraints


@dataclass
class Dataset:
    region: str
    constraints: tuple
    turns: list
    normalization: dict = field(default_factory=dict)

    @property
    def subjects(self) -> list:
        return sorted({t.subject for t in self.turns})

    def subset(self, indices) -> list:
        return [self.turns[i] for i in indices]


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class Template:
    axes: tuple
    freq_hz: float
    amplitude: float

    def __post_init__(self):
        if not 0 < self.freq_hz <= 10:
            raise ValueError("template frequency must be in (0, 10] Hz")
        if self.amplitude <= 0:
            raise ValueError("template amplitude must be positive")


HEAD_TEMPLATES = {
    "other": Template((2,), 0.7, 2.0),
    "nod": Template((0,), 2.0, 4.0),
    "shake": Template((1,), 2.0, 4.0),
}
# slow whole-head sway present under every label; gestures ride on top of it
HEAD_BACKGROUND = Template((0, 1, 2), 0.5, 8.0)
HAND_TEMPLATES = {
    "other": Template((6, 8), 0.5, 3.0),
    "to-fro": Template((1, 4), 1.2, 10.0),
    "so-what": Template((0, 3), 1.2, 10.0),
    "regress": Template((2, 5), 1.2, 10.0),
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic corpus; generation is a pure function of it."""

    region: str = "head"
    templates: dict = field(default_factory=lambda: dict(HEAD_TEMPLATES))
    coupling_gain: float = 0.5
    f0_coupling: float = 20.0
    noise_std: float = 1.0
    n_turns: int = 40
    n_subjects: int = 2
    turn_seconds: tuple = (2.0, 10.0)
    block_seconds: tuple = (1.0, 3.0)
    unvoiced_rate: float = 0.02
    label_weights: dict | None = None
    background: Template | None = None
    seed: int = 0

    def __post_init__(self):
        motion_dim(self.region)
        if "other" not in self.templates:
            raise ValueError("templates must include 'other'")
        tpl = {k: v if isinstance(v, Template) else Template(tuple(v["axes"]), v["freq_hz"], v["amplitude"])
               for k, v in self.templates.items()}
        object.__setattr__(self, "templates", tpl)
        bg = self.background
        if bg is not None and not isinstance(bg, Template):
            bg = Template(tuple(bg["axes"]), bg["freq_hz"], bg["amplitude"])
            object.__setattr__(self, "background", bg)
        d = motion_dim(self.region)
        for name, t in list(tpl.items()) + [("background", bg)] * (bg is not None):
            if any(not 0 <= a < d for a in t.axes):
                raise ValueError(f"template {name!r} uses an axis outside 0..{d - 1}")
        if self.noise_std < 0 or self.n_turns < 1 or self.n_subjects < 1:
            raise ValueError("noise_std must be >= 0 and counts >= 1")
        if not 0 < self.turn_seconds[0] <= self.turn_seconds[1]:
            raise ValueError("invalid turn length range")
        if not 0 < self.block_seconds[0] <= self.block_seconds[1]:
            raise ValueError("invalid block length range")
        if self.label_weights is not None:
            if set(self.label_weights) - set(tpl) or any(w < 0 for w in self.label_weights.values()):
                raise ValueError("label weights must be non-negative and name known templates")
            if sum(self.label_weights.values()) <= 0:
                raise ValueError("label weights must not all be zero")

    @classmethod
    def head_gestures(cls, **kw) -> "SyntheticSpec":
        """Nod/shake corpus with the shared background sway switched on."""
        kw.setdefault("background", HEAD_BACKGROUND)
        return cls(region="head", **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        for key in ("turn_seconds", "block_seconds"):
            if key in d:
                d[key] = tuple(d[key])
        if "templates" not in d and d.get("region") == "hand":
            d["templates"] = dict(HAND_TEMPLATES)
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["templates"] = {k: {"axes": list(v.axes), "freq_hz": v.freq_hz, "amplitude": v.amplitude}
                            for k, v in self.templates.items()}
        if self.background is not None:
            b = self.background
            out["background"] = {"axes": list(b.axes), "freq_hz": b.freq_hz, "amplitude": b.amplitude}
        return out


def _constraint_track(rng, n_frames, labels, weights, block_range):
    track = np.empty(n_frames, dtype=object)
    t = 0
    while t < n_frames:
        n = int(round(rng.uniform(*block_range) * FRAME_RATE))
        track[t:t + n] = labels[rng.choice(len(labels), p=weights)]
        t += n
    return track


def _synth_turn(spec: SyntheticSpec, rng, subject_idx):
    labels = list(spec.templates)
    w = np.array([(spec.label_weights or {}).get(c, 0.0 if spec.label_weights else 1.0) for c in labels])
    n60 = int(round(rng.uniform(*spec.turn_seconds) * FRAME_RATE / 2))
    n = 2 * n60
    track = _constraint_track(rng, n, labels, w / w.sum(), tuple(spec.block_seconds))
    freq = np.array([spec.templates[c].freq_hz for c in track])
    phase = rng.uniform(0, 2 * np.pi) + np.cumsum(2 * np.pi * freq / FRAME_RATE)

    t60 = np.arange(n60) / (FRAME_RATE / 2)
    env = 1.0 + 0.3 * np.sin(2 * np.pi * 0.25 * t60 + rng.uniform(0, 2 * np.pi))
    energy = np.clip(50.0 * (env + 0.02 * rng.standard_normal(n60)), 0.0, None)
    f0 = 110.0 + 40.0 * subject_idx + spec.f0_coupling * np.sin(phase[::2]) + rng.standard_normal(n60)
    gaps = rng.random(n60) < spec.unvoiced_rate
    gaps |= np.roll(gaps, 1) | np.roll(gaps, 2)
    gaps[[0, -1]] = False
    f0[gaps] = np.nan
    speech = speech_features(ProsodyContour(f0, energy, FRAME_RATE / 2))

    energy120 = np.interp(np.arange(n) / 2.0, np.arange(n60), energy) / 50.0
    scale = 1.0 + spec.coupling_gain * (energy120 - 1.0)
    motion = np.zeros((n, motion_dim(spec.region)))
    for label, tpl in spec.templates.items():
        rows = track == label
        for a in tpl.axes:
            motion[rows, a] = tpl.amplitude * scale[rows] * np.sin(phase[rows])
    if spec.background is not None:
        bg = spec.background
        drift = rng.uniform(0, 2 * np.pi) + 2 * np.pi * bg.freq_hz * np.arange(n) / FRAME_RATE
        for a in bg.axes:
            motion[:, a] += bg.amplitude * scale * np.sin(drift)
    if spec.noise_std > 0:
        motion += spec.noise_std * rng.standard_normal(motion.shape)
    return speech, motion, track


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic corpus with speech phase-locked to gesture oscillations.

    Each turn is a sequence of constraint blocks. A running phase advances at
    the active template's frequency; f0 carries ``f0_coupling * sin(phase)``
    and the template axes carry ``amplitude * (1 + gain * (energy - 1)) *
    sin(phase)`` with energy normalized to mean one. An optional background
    template adds the same energy-scaled oscillation, on its own free-running
    phase, to every frame. Speech goes through the
    feature pipeline (60 fps contour, unvoiced gaps, derivatives, upsampling)
    and is z-normalized per subject.
    """
    rng = np.random.default_rng(spec.seed)
    raw = []
    for i in range(spec.n_turns):
        subj = i % spec.n_subjects
        raw.append((f"turn{i:04d}", f"s{subj:02d}", *_synth_turn(spec, rng, subj)))
    speech_all = np.concatenate([r[2] for r in raw])
    subjects = np.concatenate([[r[1]] * len(r[2]) for r in raw])
    normed, stats = znorm_per_subject(speech_all, subjects)
    turns, at = [], 0
    for tid, subj, speech, motion, track in raw:
        turns.append(TurnRecord(tid, subj, normed[at:at + len(speech)], motion, track, spec.region))
        at += len(speech)
    norm = {s: {"mean": stats.mean[s].tolist(), "std": stats.std[s].tolist()} for s in stats.mean}
    return Dataset(spec.region, tuple(spec.templates), turns, norm)


# --------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class Split:
    train: tuple
    validation: tuple
    test: tuple


def tenfold_splits(n_turns: int, seed: int = 0) -> list[Split]:
    """Nine evaluation rounds over ten folds.

    Fold 0 is the fixed validation fold (state-count selection). Each round
    tests on one of folds 1..9 and trains on every other turn, validation
    fold included.
    """
    if n_turns < 10:
        raise ValueError("ten-fold cross-validation needs at least 10 turns")
    order = np.random.default_rng(seed).permutation(n_turns)
    folds = [tuple(sorted(int(i) for i in f)) for f in np.array_split(order, 10)]
    validation = folds[0]
    rounds = []
    for r in range(1, 10):
        test = folds[r]
        train = tuple(sorted(set(range(n_turns)) - set(test)))
        rounds.append(Split(train, validation, test))
    return rounds


def selection_split(n_turns: int, seed: int = 0) -> tuple[tuple, tuple]:
    """(train, validation) used once to pick the number of states."""
    s = tenfold_splits(n_turns, seed)[0]
    return tuple(sorted(set(range(n_turns)) - set(s.validation))), s.validation


# --------------------------------------------------------------------------
# persistence


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _motion_columns(region):
    return list(HEAD_AXES if region == "head" else HAND_AXES)


def _turn_bytes(turn: TurnRecord) -> bytes:
    cols = ["time", *SPEECH_COLUMNS, *_motion_columns(turn.region), "constraint"]
    lines = ["\t".join(cols)]
    for i in range(len(turn)):
        nums = [repr(float(i / FRAME_RATE)), *map(repr, map(float, turn.speech[i])),
                *map(repr, map(float, turn.motion[i]))]
        lines.append("\t".join(nums + [str(turn.constraints[i])]))
    return ("\n".join(lines) + "\n").encode()


def parse_turn_table(text: str, region: str | None = None):
    """Parse a turn TSV into (speech, motion or None, labels or None)."""
    rows = [r.split("\t") for r in text.splitlines() if r]
    if not rows:
        raise FormatError("empty turn table")
    header = rows[0]
    try:
        s_idx = [header.index(c) for c in SPEECH_COLUMNS]
    except ValueError:
        raise FormatError("turn table lacks speech columns") from None
    if region is None:
        region = "hand" if HAND_AXES[0] in header else "head"
    m_cols = _motion_columns(region)
    m_idx = [header.index(c) for c in m_cols if c in header]
    c_idx = header.index("constraint") if "constraint" in header else None
    body = rows[1:]
    if any(len(r) != len(header) for r in body):
        raise FormatError("ragged turn table")
    try:
        speech = np.array([[float(r[i]) for i in s_idx] for r in body])
        motion = np.array([[float(r[i]) for i in m_idx] for r in body]) if len(m_idx) == len(m_cols) else None
    except ValueError as exc:
        raise FormatError(f"bad number in turn table: {exc}") from None
    labels = np.array([r[c_idx] for r in body], dtype=object) if c_idx is not None else None
    return speech.reshape(len(body), len(SPEECH_COLUMNS)), motion, labels


def save_dataset(ds: Dataset, path) -> Path:
    """Write atomically: build in a temp dir next to ``path`` then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=path.parent))
    try:
        (tmp / "turns").mkdir()
        entries = []
        for t in ds.turns:
            data = _turn_bytes(t)
            rel = f"turns/{t.turn_id}.tsv"
            (tmp / rel).write_bytes(data)
            entries.append({"id": t.turn_id, "subject": t.subject, "file": rel, "n_frames": len(t),
                            "sha256": _sha256(data)})
        manifest = {
            "format": DATASET_FORMAT, "format_version": DATASET_VERSIONS[-1], "region": ds.region,
            "constraints": list(ds.constraints), "subjects": ds.subjects, "frame_rate": FRAME_RATE,
            "speech_columns": list(SPEECH_COLUMNS), "motion_columns": _motion_columns(ds.region),
            "normalization": ds.normalization, "turns": entries,
        }
        manifest["checksum"] = _sha256(_canonical(manifest))
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def _verified_json(path, fmt, versions):
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    if not isinstance(obj, dict) or obj.get("format") != fmt:
        raise FormatError(f"{path} is not a {fmt} file")
    if obj.get("format_version") not in versions:
        raise FormatError(f"{path}: unsupported format version {obj.get('format_version')!r}; "
                          f"this reader understands {list(versions)}")
    claimed = obj.pop("checksum", None)
    if claimed != _sha256(_canonical(obj)):
        raise FormatError(f"{path}: checksum mismatch")
    return obj


def load_dataset(path) -> Dataset:
    path = Path(path)
    man = _verified_json(path / "manifest.json", DATASET_FORMAT, DATASET_VERSIONS)
    region = man["region"]
    turns = []
    for e in man["turns"]:
        try:
            data = (path / e["file"]).read_bytes()
        except OSError as exc:
            raise FormatError(f"missing turn file {e['file']}: {exc}") from None
        if _sha256(data) != e["sha256"]:
            raise FormatError(f"turn file {e['file']} is corrupted (checksum mismatch)")
        speech, motion, labels = parse_turn_table(data.decode(), region)
        if motion is None or labels is None or len(speech) != e["n_frames"]:
            raise FormatError(f"turn file {e['file']} is incomplete")
        turns.append(TurnRecord(e["id"], e["subject"], speech, motion, labels, region))
    if set(t.subject for t in turns) - set(man["subjects"]):
        raise FormatError("turn subject missing from subject list")
    return Dataset(region, tuple(man["constraints"]), turns, man["normalization"])


def _arr(a) -> dict:
    a = np.asarray(a)
    if a.dtype == bool:
        return {"shape": list(a.shape), "dtype": "bool", "data": a.ravel().tolist()}
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _unarr(d) -> np.ndarray:
    dtype = bool if d.get("dtype") == "bool" else float
    return np.array(d["data"], dtype=dtype).reshape(d["shape"])


def _states_out(states):
    return [{"speech": {"mean": _arr(s.speech.mean), "cov": _arr(s.speech.cov)},
             "motion": {"mean": _arr(s.motion.mean), "cov": _arr(s.motion.cov)}} for s in states]


def _states_in(items):
    from .dbn import GaussianState
    from .statmath import GaussianParams

    return [GaussianState(GaussianParams(_unarr(s["speech"]["mean"]), _unarr(s["speech"]["cov"])),
                          GaussianParams(_unarr(s["motion"]["mean"]), _unarr(s["motion"]["cov"])))
            for s in items]


def save_model(model, path, meta: dict | None = None) -> Path:
    from .cdbn import CdbnModel

    if isinstance(model, CdbnModel):
        payload = {"kind": "cdbn", "constraints": list(model.constraints), "states": _states_out(model.states),
                   "trans": _arr(model.trans), "priors": _arr(model.priors), "mask": _arr(model.mask),
                   "constraint_prior": _arr(model.constraint_prior), "global_state": model.global_state}
    else:
        payload = {"kind": "dbn", "states": _states_out(model.states), "trans": _arr(model.trans),
                   "prior": _arr(model.prior)}
    doc = {"format": MODEL_FORMAT, "format_version": MODEL_VERSIONS[-1], "model": payload, "meta": meta or {}}
    doc["checksum"] = _sha256(_canonical(doc))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def load_model(path, with_meta: bool = False):
    from .cdbn import CdbnModel
    from .dbn import DbnModel

    doc = _verified_json(path, MODEL_FORMAT, MODEL_VERSIONS)
    p = doc["model"]
    try:
        if p["kind"] == "cdbn":
            model = CdbnModel(tuple(p["constraints"]), _states_in(p["states"]), _unarr(p["trans"]),
                              _unarr(p["priors"]), _unarr(p["mask"]), _unarr(p["constraint_prior"]),
                              p["global_state"])
        elif p["kind"] == "dbn":
            model = DbnModel(_states_in(p["states"]), _unarr(p["trans"]), _unarr(p["prior"]))
        else:
            raise FormatError(f"unknown model kind {p['kind']!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed model: {exc}") from None
    return (model, doc["meta"]) if with_meta else model

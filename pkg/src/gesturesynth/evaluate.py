"""Objective metrics for synthesized trajectories and the gesture-accuracy harness."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .statmath import GaussianParams, cca, kl_gaussian

_log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "model", "n_turns", "cca_m", "cca_ms", "kld", "llr"],
    "properties": {
        "schema_version": {"type": "integer", "const": REPORT_SCHEMA_VERSION},
        "model": {"type": "string"},
        "n_turns": {"type": "integer", "minimum": 0},
        "cca_m": {"$ref": "#/definitions/summary"},
        "cca_ms": {"$ref": "#/definitions/summary"},
        "kld": {"type": "number", "minimum": 0},
        "llr": {"type": "number"},
        "per_turn": {"type": "array"},
        "gesture_accuracy": {"type": "object", "additionalProperties": {"type": "number"}},
    },
    "definitions": {
        "summary": {
            "type": "object",
            "required": ["mean", "std", "n"],
            "properties": {"mean": {"type": ["number", "null"]}, "std": {"type": ["number", "null"]},
                           "n": {"type": "integer"}},
        }
    },
}


class DegenerateTrajectory(ValueError):
    pass


def _first_cca(a, b, full: bool):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise ValueError("sequences must have equal length")
    for blk in (a, b):
        if np.all(np.ptp(blk.reshape(blk.shape[0], -1), axis=0) == 0):
            raise DegenerateTrajectory("constant trajectory")
    # constant columns carry no information and break whitening
    a = a[:, np.ptp(a, axis=0) > 0] if a.ndim == 2 else a
    b = b[:, np.ptp(b, axis=0) > 0] if b.ndim == 2 else b
    rho = cca(a, b)
    return rho if full else float(rho[0])


def cca_m(original, synthesized, full: bool = False):
    """First canonical correlation between original and synthesized motion of one turn."""
    return _first_cca(original, synthesized, full)


def cca_ms(synthesized, speech, full: bool = False):
    """First canonical correlation between synthesized motion and speech of one turn."""
    return _first_cca(synthesized, speech, full)


def summarize(values) -> dict:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def per_turn_cca(pairs, metric=cca_m) -> list:
    """Metric per turn; degenerate turns become None with a warning."""
    out = []
    for i, (a, b) in enumerate(pairs):
        try:
            out.append(metric(a, b))
        except DegenerateTrajectory:
            warnings.warn(f"turn {i}: constant trajectory, skipped", stacklevel=2)
            out.append(None)
    return out


def kld_metric(original, synthesized) -> float:
    """KL(original || synthesized) between full-covariance Gaussian fits of two frame sets."""
    x = np.asarray(original, dtype=float)
    y = np.asarray(synthesized, dtype=float)
    d = x.shape[1]
    if x.shape[0] <= d + 1 or y.shape[0] <= d + 1:
        raise ValueError("need more than d + 1 frames in each set")
    return kl_gaussian(GaussianParams.fit(x), GaussianParams.fit(y))


# --------------------------------------------------------------------------
# gesture detectors


def oscillation_power(traj, frame_rate: float = 120.0, cutoff_hz: float = 0.5) -> np.ndarray:
    """Per-axis variance after removing a linear trend and content below ``cutoff_hz``."""
    x = signal.detrend(np.asarray(traj, dtype=float), axis=0)
    if x.shape[0] > 27:
        sos = signal.butter(2, cutoff_hz, btype="highpass", fs=frame_rate, output="sos")
        x = signal.sosfiltfilt(sos, x, axis=0)
    return x.var(axis=0)


def axis_detector(axis: int, share: float = 0.6, frame_rate: float = 120.0):
    """Succeeds when ``axis`` carries more than ``share`` of the oscillation power."""
    def detect(traj) -> bool:
        p = oscillation_power(traj, frame_rate)
        total = p.sum()
        return bool(total > 0 and p[axis] / total > share)
    return detect


def template_detector(templates: dict, target: str, frame_rate: float = 120.0):
    """Succeeds when the target's axes hold more oscillation power than any other template's.

    ``templates`` maps gesture name to a sequence of axis indices.
    """
    def detect(traj) -> bool:
        p = oscillation_power(traj, frame_rate)
        score = {g: p[list(ax)].sum() / max(p.sum(), 1e-300) for g, ax in templates.items()}
        return max(score, key=score.get) == target
    return detect


# nod versus shake: which of pitch and yaw oscillates harder
_HEAD_GESTURE_AXES = {"nod": (0,), "shake": (1,)}
HEAD_DETECTORS = {g: template_detector(_HEAD_GESTURE_AXES, g) for g in _HEAD_GESTURE_AXES}


def gesture_accuracy(model, speech_turns, target: str, detector=None) -> float:
    """Fraction of turns whose synthesis under a constant ``target`` track passes the detector."""
    from .cdbn import constrained_synthesize

    if detector is None:
        try:
            detector = HEAD_DETECTORS[target]
        except KeyError:
            raise ValueError(f"no detector registered for gesture {target!r}") from None
    if target not in model.constraints:
        raise ValueError(f"model has no constraint {target!r}")
    hits = [detector(constrained_synthesize(model, s, [target] * len(s))) for s in speech_turns]
    return float(np.mean(hits)) if hits else float("nan")


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    model: str
    n_turns: int
    cca_m: dict
    cca_ms: dict
    kld: float
    llr: float
    per_turn: list = field(default_factory=list)
    gesture_accuracy: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def write_sweep(rows, path):
    """Tab-separated N / LLR / CCA_m table for plotting."""
    with open(path, "w") as fh:
        fh.write("n_states\tllr_train\tllr_validation\tcca_m\n")
        for r in rows:
            fh.write(f"{r['n_states']}\t{r['llr_train']!r}\t{r['llr_validation']!r}\t{r['cca_m']!r}\n")


def state_count_sweep(train, validation, candidates, trainer, synthesizer, llr) -> list:
    """Train one model per candidate state count and score it on the validation turns.

    ``trainer(train, n)`` returns a model, ``synthesizer(model, turn)`` a
    motion trajectory and ``llr(model, turns)`` a log-likelihood rate; turns
    expose ``.motion``. Rows come back sorted by state count.
    """
    rows = []
    for n in sorted(set(candidates)):
        model = trainer(train, n)
        ccas = per_turn_cca([(t.motion, synthesizer(model, t)) for t in validation])
        rows.append({
            "n_states": int(n),
            "llr_train": float(llr(model, train)),
            "llr_validation": float(llr(model, validation)),
            "cca_m": summarize(ccas)["mean"],
        })
    return rows

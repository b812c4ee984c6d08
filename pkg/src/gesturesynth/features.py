"""Prosody and motion feature streams.

Contours are ingested at 60 fps (40 ms analysis windows every 16.67 ms is the
expected provenance; no waveform processing happens here). Speech features are
six columns in this order::

    f0, energy, d_f0, d_energy, dd_f0, dd_energy

and are upsampled to the 120 fps motion-capture rate before normalization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEECH_DIM = 6
SPEECH_COLUMNS = ("f0", "energy", "d_f0", "d_energy", "dd_f0", "dd_energy")
MOTION_DIMS = {"head": 3, "hand": 10}
HEAD_AXES = ("pitch", "yaw", "roll")
HAND_AXES = (
    "r_arm_x", "r_arm_y", "r_arm_z",
    "l_arm_x", "l_arm_y", "l_arm_z",
    "r_forearm_x", "r_forearm_y",
    "l_forearm_x", "l_forearm_y",
)
CONTOUR_RATE = 60.0
FRAME_RATE = 120.0


class FeatureError(ValueError):
    """Input stream cannot be turned into features."""


@dataclass(frozen=True)
class ProsodyContour:
    """Raw pitch/energy contour. Unvoiced f0 frames are NaN."""

    f0: np.ndarray
    energy: np.ndarray
    frame_rate: float = CONTOUR_RATE

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=float)
        energy = np.asarray(self.energy, dtype=float)
        if f0.shape != energy.shape or f0.ndim != 1:
            raise FeatureError("f0 and energy must be 1-D and of equal length")
        if np.any(energy < 0):
            raise FeatureError("energy must be non-negative")
        if self.frame_rate <= 0:
            raise FeatureError("frame_rate must be positive")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "energy", energy)


def motion_dim(region: str) -> int:
    try:
        return MOTION_DIMS[region]
    except KeyError:
        raise FeatureError(f"unknown region {region!r}; expected one of {sorted(MOTION_DIMS)}") from None


def interpolate_unvoiced(contour: ProsodyContour) -> ProsodyContour:
    """Fill unvoiced (NaN) f0 frames.

    Interior gaps are linearly interpolated between the nearest voiced
    neighbours; leading and trailing gaps hold the nearest voiced value.
    """
    f0 = contour.f0
    voiced = ~np.isnan(f0)
    if not voiced.any():
        raise FeatureError("contour has no voiced frames")
    idx = np.arange(f0.size)
    filled = f0.copy()
    filled[~voiced] = np.interp(idx[~voiced], idx[voiced], f0[voiced])
    return ProsodyContour(filled, contour.energy, contour.frame_rate)


def expand_derivatives(seq) -> np.ndarray:
    """Return a (T, 3) array of value, first and second difference.

    Central differences inside, one-sided at the two boundaries.
    """
    x = np.asarray(seq, dtype=float)
    if x.ndim != 1 or x.size < 3:
        raise FeatureError("need a 1-D sequence of length >= 3")
    d1 = np.gradient(x)
    d2 = np.gradient(d1)
    return np.column_stack([x, d1, d2])


def resample(seq, from_rate: float, to_rate: float) -> np.ndarray:
    """Linear resampling on the time axis, holding the last value past the end."""
    if from_rate <= 0 or to_rate <= 0:
        raise FeatureError("rates must be positive")
    x = np.asarray(seq, dtype=float)
    if x.shape[0] == 0:
        raise FeatureError("cannot resample an empty sequence")
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n_out = int(round(x.shape[0] * to_rate / from_rate))
    t_out = np.arange(n_out) * (from_rate / to_rate)
    t_in = np.arange(x.shape[0], dtype=float)
    out = np.column_stack([np.interp(t_out, t_in, x[:, c]) for c in range(x.shape[1])])
    return out[:, 0] if squeeze else out


def speech_features(contour: ProsodyContour, to_rate: float = FRAME_RATE) -> np.ndarray:
    """Contour -> (T, 6) unnormalized speech features at ``to_rate``."""
    filled = interpolate_unvoiced(contour)
    f0 = expand_derivatives(filled.f0)
    en = expand_derivatives(filled.energy)
    feats = np.column_stack([f0[:, 0], en[:, 0], f0[:, 1], en[:, 1], f0[:, 2], en[:, 2]])
    return resample(feats, filled.frame_rate, to_rate)


@dataclass
class NormStats:
    """Per-subject z-normalization statistics (sample std, ddof=1).

    ``degenerate`` flags dimensions with zero variance; those are only centered.
    """

    mean: dict
    std: dict
    degenerate: dict


def znorm_per_subject(frames, subject_ids) -> tuple[np.ndarray, NormStats]:
    x = np.asarray(frames, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    subjects = np.asarray(subject_ids)
    if subjects.shape[0] != x.shape[0]:
        raise FeatureError("one subject id per frame required")
    out = np.empty_like(x)
    stats = NormStats({}, {}, {})
    for s in dict.fromkeys(subjects.tolist()):
        rows = subjects == s
        if rows.sum() < 2:
            raise FeatureError(f"subject {s!r} has fewer than 2 frames")
        mu = x[rows].mean(axis=0)
        sd = x[rows].std(axis=0, ddof=1)
        flat = sd <= 0
        sd = np.where(flat, 1.0, sd)
        out[rows] = (x[rows] - mu) / sd
        stats.mean[s], stats.std[s], stats.degenerate[s] = mu, sd, flat
    return out, stats


def apply_znorm(frames, subject_ids, stats: NormStats) -> np.ndarray:
    x = np.asarray(frames, dtype=float)
    subjects = np.asarray(subject_ids)
    out = np.empty_like(x)
    for s in dict.fromkeys(subjects.tolist()):
        rows = subjects == s
        out[rows] = (x[rows] - stats.mean[s]) / stats.std[s]
    return out


def denormalize(frames, subject_ids, stats: NormStats) -> np.ndarray:
    x = np.asarray(frames, dtype=float)
    subjects = np.asarray(subject_ids)
    out = np.empty_like(x)
    for s in dict.fromkeys(subjects.tolist()):
        rows = subjects == s
        out[rows] = x[rows] * stats.std[s] + stats.mean[s]
    return out

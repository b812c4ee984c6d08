"""Keypoint smoothing of joint-rotation trajectories in quaternion space.

Equidistant keypoints are kept verbatim; frames in between are rebuilt by
spherical interpolation of the keypoint rotations. Angles are in degrees and
follow the intrinsic x-y-z convention (pitch about x, then yaw about y, then
roll about z), i.e. ``R = Rx(pitch) @ Ry(yaw) @ Rz(roll)``. Two-DOF forearm
groups are padded with a zero third angle before conversion and the third
angle is dropped afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HEAD_RATE = 15.0
HAND_RATE = 12.0
DEFAULT_GROUPS = {
    3: ((0, 1, 2),),
    10: ((0, 1, 2), (3, 4, 5), (6, 7), (8, 9)),
}


@dataclass(frozen=True)
class KeypointPlan:
    rate: float
    frame_rate: float = 120.0
    method: str = "slerp"

    def __post_init__(self):
        if not 0 < self.rate <= self.frame_rate:
            raise ValueError("keypoint rate must be in (0, frame_rate]")
        if self.method not in ("slerp", "squad"):
            raise ValueError(f"unknown interpolation {self.method!r}")

    @classmethod
    def for_region(cls, region: str, frame_rate: float = 120.0) -> "KeypointPlan":
        return cls(HEAD_RATE if region == "head" else HAND_RATE, frame_rate)


# --------------------------------------------------------------------------
# quaternion helpers, (w, x, y, z) layout, vectorized over leading axes


def qmul(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def qconj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _axis_quat(angle_rad, axis):
    q = np.zeros(np.shape(angle_rad) + (4,))
    q[..., 0] = np.cos(angle_rad / 2)
    q[..., 1 + axis] = np.sin(angle_rad / 2)
    return q


def euler_to_quat(angles_deg):
    a = np.radians(np.asarray(angles_deg, dtype=float))
    q = qmul(qmul(_axis_quat(a[..., 0], 0), _axis_quat(a[..., 1], 1)), _axis_quat(a[..., 2], 2))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_euler(q):
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    r02 = 2 * (x * z + w * y)
    r12 = 2 * (y * z - w * x)
    r22 = 1 - 2 * (x * x + y * y)
    r01 = 2 * (x * y - w * z)
    r00 = 1 - 2 * (y * y + z * z)
    pitch = np.arctan2(-r12, r22)
    yaw = np.arcsin(np.clip(r02, -1.0, 1.0))
    roll = np.arctan2(-r01, r00)
    return np.degrees(np.stack([pitch, yaw, roll], axis=-1))


def slerp(q0, q1, u):
    """Shortest-arc spherical interpolation; ``u`` broadcasts against the quaternions."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    u = np.asarray(u, dtype=float)[..., None]
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0, -q1, q1)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_t = np.sin(theta)
    near = sin_t < 1e-9
    safe = np.where(near, 1.0, sin_t)
    w0 = np.where(near, 1.0 - u, np.sin((1.0 - u) * theta) / safe)
    w1 = np.where(near, u, np.sin(u * theta) / safe)
    out = w0 * q0 + w1 * q1
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _qlog(q):
    v = q[..., 1:]
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    ang = np.arctan2(nv, q[..., :1])
    scale = np.where(nv > 1e-12, ang / np.where(nv > 1e-12, nv, 1.0), 1.0)
    return np.concatenate([np.zeros_like(q[..., :1]), v * scale], axis=-1)


def _qexp(q):
    v = q[..., 1:]
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(nv > 1e-12, np.sin(nv) / np.where(nv > 1e-12, nv, 1.0), 1.0)
    return np.concatenate([np.cos(nv), v * scale], axis=-1)


def _squad_controls(keys):
    n = keys.shape[0]
    ctrl = keys.copy()
    for i in range(1, n - 1):
        inv = qconj(keys[i])
        a = _qlog(qmul(inv, keys[i + 1]))
        b = _qlog(qmul(inv, keys[i - 1]))
        ctrl[i] = qmul(keys[i], _qexp(-(a + b) / 4))
    return ctrl


def _hemisphere(keys):
    keys = keys.copy()
    for i in range(1, keys.shape[0]):
        if np.dot(keys[i - 1], keys[i]) < 0:
            keys[i] = -keys[i]
    return keys


# --------------------------------------------------------------------------


def keypoint_indices(n_frames: int, plan: KeypointPlan) -> np.ndarray:
    step = plan.frame_rate / plan.rate
    idx = np.round(np.arange(0, n_frames - 1, step)).astype(int)
    return np.unique(np.concatenate([idx, [n_frames - 1]]))


def _interpolate_group(angles, keys_idx, method):
    """Rebuild one rotation group; returns (euler degrees, quaternions)."""
    T = angles.shape[0]
    keys = _hemisphere(euler_to_quat(angles[keys_idx]))
    ctrl = _squad_controls(keys) if method == "squad" else None
    seg = np.clip(np.searchsorted(keys_idx, np.arange(T), side="right") - 1, 0, len(keys_idx) - 2)
    k0, k1 = keys_idx[seg], keys_idx[seg + 1]
    u = (np.arange(T) - k0) / (k1 - k0)
    q = slerp(keys[seg], keys[seg + 1], u)
    if ctrl is not None:
        inner = slerp(ctrl[seg], ctrl[seg + 1], u)
        q = slerp(q, inner, 2 * u * (1 - u))
    euler = quat_to_euler(q)
    # pick the 360-degree branch nearest the linear blend of the keypoint angles
    ref = angles[k0] + (angles[k1] - angles[k0]) * u[:, None]
    euler = euler + 360.0 * np.round((ref - euler) / 360.0)
    euler[keys_idx] = angles[keys_idx]
    return euler, q


def smooth_trajectory(traj, plan: KeypointPlan, groups=None, return_quaternions: bool = False):
    """Keypoint + quaternion interpolation smoothing of a (T, d) trajectory in degrees."""
    traj = np.asarray(traj, dtype=float)
    if traj.ndim != 2 or traj.shape[0] < 2:
        raise ValueError("trajectory must be (T, d) with T >= 2")
    if groups is None:
        try:
            groups = DEFAULT_GROUPS[traj.shape[1]]
        except KeyError:
            raise ValueError(f"no default rotation grouping for {traj.shape[1]} columns") from None
    keys_idx = keypoint_indices(traj.shape[0], plan)
    out = traj.copy()
    quats = []
    for cols in groups:
        cols = list(cols)
        angles = np.zeros((traj.shape[0], 3))
        angles[:, : len(cols)] = traj[:, cols]
        euler, q = _interpolate_group(angles, keys_idx, plan.method)
        out[:, cols] = euler[:, : len(cols)]
        quats.append(q)
    if return_quaternions:
        return out, quats
    return out

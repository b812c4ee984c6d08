import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gesturesynth import smooth as Sm

PLAN = Sm.KeypointPlan(15.0)


def test_constant_trajectory_unchanged():
    traj = np.tile([10.0, -20.0, 5.0], (100, 1))
    assert np.allclose(Sm.smooth_trajectory(traj, PLAN), traj, atol=1e-9)


def test_keypoints_preserved(rng):
    traj = np.cumsum(rng.normal(0, 2, (121, 3)), axis=0)
    out = Sm.smooth_trajectory(traj, PLAN)
    k = Sm.keypoint_indices(121, PLAN)
    assert np.array_equal(out[k], traj[k])
    assert k[0] == 0 and k[-1] == 120 and np.all(np.diff(k) == 8)


def test_single_axis_midpoint():
    for axis in range(3):
        traj = np.zeros((9, 3))
        traj[-1, axis] = 90.0
        out = Sm.smooth_trajectory(traj, Sm.KeypointPlan(15.0), groups=((0, 1, 2),))
        assert out[4, axis] == pytest.approx(45.0, abs=1e-6)
        assert np.allclose(np.delete(out[4], axis), 0.0, atol=1e-9)


def test_euler_round_trip(rng):
    ang = rng.uniform([-170, -80, -170], [170, 80, 170], (200, 3))
    assert np.allclose(Sm.quat_to_euler(Sm.euler_to_quat(ang)), ang, atol=1e-9)


def test_intrinsic_xyz_convention():
    # R = Rx(a) Ry(b) Rz(c): compose the quaternion the same way by hand
    a, b, c = np.radians([30.0, 20.0, 10.0])
    qx = np.array([np.cos(a / 2), np.sin(a / 2), 0, 0])
    qy = np.array([np.cos(b / 2), 0, np.sin(b / 2), 0])
    qz = np.array([np.cos(c / 2), 0, 0, np.sin(c / 2)])
    ref = Sm.qmul(Sm.qmul(qx, qy), qz)
    assert np.allclose(Sm.euler_to_quat([30.0, 20.0, 10.0]), ref)


def test_slerp_endpoints_and_shortest_arc():
    q0 = Sm.euler_to_quat([0.0, 0.0, 0.0])
    q1 = -Sm.euler_to_quat([0.0, 40.0, 0.0])      # same rotation, other hemisphere
    mid = Sm.slerp(q0, q1, 0.5)
    assert Sm.quat_to_euler(mid)[1] == pytest.approx(20.0, abs=1e-9)
    assert np.allclose(np.abs(Sm.slerp(q0, q1, 1.0)), np.abs(q1))


@given(arrays(float, (40, 3), elements=st.floats(-60, 60)), st.sampled_from(["slerp", "squad"]))
def test_smoothing_contract_property(traj, method):
    plan = Sm.KeypointPlan(15.0, method=method)
    out, quats = Sm.smooth_trajectory(traj, plan, return_quaternions=True)
    k = Sm.keypoint_indices(len(traj), plan)
    assert np.allclose(out[k], traj[k], atol=1e-6)
    for q in quats:
        assert np.allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-9)


def test_hand_groups_pad_two_dof(rng):
    traj = rng.normal(0, 10, (60, 10))
    out = Sm.smooth_trajectory(traj, Sm.KeypointPlan.for_region("hand"))
    k = Sm.keypoint_indices(60, Sm.KeypointPlan.for_region("hand"))
    assert out.shape == traj.shape and np.array_equal(out[k], traj[k])


def test_plan_validation():
    with pytest.raises(ValueError):
        Sm.KeypointPlan(0.0)
    with pytest.raises(ValueError):
        Sm.KeypointPlan(15.0, method="cubic")
    with pytest.raises(ValueError):
        Sm.smooth_trajectory(np.zeros((10, 4)), PLAN)

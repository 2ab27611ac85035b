import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nilbs import geometry as geo
from nilbs.errors import ConfigError, SingularTransform

from conftest import random_affine

angles = st.floats(-np.pi, np.pi, allow_nan=False)
coords = st.floats(-5, 5, allow_nan=False)


def test_compose_identity():
    t = geo.frame(1.0, -2.0, 0.3)
    np.testing.assert_array_equal(geo.compose(geo.identity(), t), t)


def test_compose_translations_add():
    np.testing.assert_allclose(geo.compose(geo.translate(1, 2), geo.translate(3, 4)), geo.translate(4, 6), atol=0)


def test_compose_rotations_add():
    np.testing.assert_allclose(geo.compose(geo.rot_z(np.pi / 2), geo.rot_z(np.pi / 2)), geo.rot_z(np.pi), atol=1e-15)


def test_compose_applies_right_operand_first():
    a, b = geo.rot_z(0.7), geo.translate(1, 0)
    p = np.array([0.5, 0.25, 0.0, 1.0])
    np.testing.assert_allclose(geo.compose(a, b) @ p, a @ (b @ p))


def test_invert_examples():
    np.testing.assert_array_equal(geo.invert(np.eye(4)), np.eye(4))
    np.testing.assert_allclose(geo.invert(geo.translate(1, 2)), geo.translate(-1, -2), atol=0)
    with pytest.raises(SingularTransform):
        geo.invert(np.zeros((4, 4)))


def test_invert_threshold():
    with pytest.raises(SingularTransform):
        geo.invert(np.diag([1e-5, 1e-5, 1e-5, 1.0]))
    geo.invert(np.diag([1e-3, 1e-3, 1e-3, 1.0]))


@given(st.integers(0, 2**31 - 1))
def test_invert_roundtrip(seed):
    t = random_affine(np.random.default_rng(seed))
    np.testing.assert_allclose(geo.compose(t, geo.invert(t)), np.eye(4), atol=1e-9)


@given(st.integers(0, 2**31 - 1))
def test_compose_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_affine(rng) for _ in range(3))
    np.testing.assert_allclose(geo.compose(geo.compose(a, b), c), geo.compose(a, geo.compose(b, c)), atol=1e-12)


@given(coords, coords, angles)
def test_affine_keeps_homogeneous_coordinate(x, y, a):
    t = geo.frame(x, y, a)
    assert (t @ np.array([1.0, 2.0, 0.0, 1.0]))[3] == 1.0


def two_bone_rig(child_pivot=(1.0, 0.0)):
    return geo.Rig(
        parent=(-1, 0),
        rest_frames=np.array([geo.identity(), geo.frame(*child_pivot)]),
        pivots=np.array([[0.0, 0.0], child_pivot]),
    )


def test_pose_fn_rest_is_fixed_point(small_anim):
    rig = small_anim.rig
    np.testing.assert_array_equal(geo.pose_fn(rig, geo.Pose.rest(rig.bone_count)), rig.rest_frames)


def test_pose_fn_single_bone():
    rest = geo.frame(0.5, 0.2, 0.1)
    rig = geo.Rig((-1,), rest[None], np.zeros((1, 2)))
    posed = geo.pose_fn(rig, geo.Pose([np.pi / 2]))
    np.testing.assert_allclose(posed[0], geo.rot_z(np.pi / 2) @ rest, atol=1e-15)


def test_pose_fn_two_link_chain_by_hand():
    rig = two_bone_rig()
    posed = geo.pose_fn(rig, geo.Pose([np.pi / 2, 0.0]))
    # parent rotates 90 degrees about the origin; the child frame at (1, 0) is carried to (0, 1)
    # and turned by 90 degrees
    expected_child = np.array([[0.0, -1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    np.testing.assert_allclose(posed[1], expected_child, atol=1e-15)

    posed = geo.pose_fn(rig, geo.Pose([np.pi / 2, -np.pi / 2], [0.5, 0.0]))
    # child turns back about its own pivot: frame is axis-aligned again at (0.5, 1)
    np.testing.assert_allclose(posed[1], geo.translate(0.5, 1.0), atol=1e-15)


@given(st.lists(angles, min_size=6, max_size=6), coords, coords)
def test_posed_frames_are_affine(theta, tx, ty):
    from nilbs.dataset import build_gingerbread

    rig, _ = build_gingerbread()
    for f in geo.pose_fn(rig, geo.Pose(theta, [tx, ty])):
        assert geo.is_affine(f)


def test_rig_validation():
    with pytest.raises(ValueError):
        geo.Rig((0,), np.eye(4)[None], np.zeros((1, 2)))
    with pytest.raises(ValueError):
        geo.Rig((-1, 1), np.stack([np.eye(4)] * 2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        geo.Rig((-1, 2, 1), np.stack([np.eye(4)] * 3), np.zeros((3, 2)))
    with pytest.raises(SingularTransform):
        geo.Rig((-1,), np.zeros((1, 4, 4)), np.zeros((1, 2)))


def test_pose_length_must_match():
    with pytest.raises(ValueError):
        geo.pose_fn(two_bone_rig(), geo.Pose([0.0]))


def test_rig_and_pose_json_roundtrip(tmp_path):
    rig = two_bone_rig()
    geo.save_json(rig.to_dict(), tmp_path / "rig.json")
    back = geo.Rig.from_dict(geo.load_json(tmp_path / "rig.json"))
    assert back.parent == rig.parent
    np.testing.assert_array_equal(back.rest_frames, rig.rest_frames)
    pose = geo.Pose([0.1, -0.2], [1.0, 2.0])
    again = geo.Pose.from_dict(pose.to_dict())
    np.testing.assert_array_equal(again.theta, pose.theta)
    np.testing.assert_array_equal(again.root_translation, pose.root_translation)
    with pytest.raises(ConfigError):
        geo.Rig.from_dict({"bones": [{"parent": -1}]})

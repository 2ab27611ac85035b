import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nilbs import geometry as geo
from nilbs.errors import SingularBlend
from nilbs.inverse import (
    BlendCounter,
    augment_ghost,
    corrected_occupancy,
    forward_map,
    inverse_map,
    query,
    query_backward,
)
from nilbs.lbs import blend_matrices
from nilbs.occupancy import OccupancyGrid, query_grid
from nilbs.weightnet import WeightNetParams, init_params

from conftest import random_rigid


def constant_net(logits, ghost=True):
    """A network whose output ignores its input: one zero layer plus a bias."""
    logits = np.asarray(logits, dtype=np.float64)
    bones = len(logits) - 1
    return WeightNetParams([(np.zeros((bones + 1, 3 * bones)), logits)], ghost=ghost)


def one_hot_net(k, bones):
    logits = np.full(bones + 1, -1000.0)
    logits[k] = 0.0
    return constant_net(logits)


def test_augment_ghost_clones_root():
    rng = np.random.default_rng(0)
    rest = np.stack([random_rigid(rng) for _ in range(6)])
    posed = np.stack([random_rigid(rng) for _ in range(6)])
    g = augment_ghost(rest, posed)
    assert len(g.rest) == len(g.posed) == 7
    assert g.rest[6].tobytes() == g.rest[0].tobytes()
    assert g.posed[6].tobytes() == g.posed[0].tobytes()
    single = augment_ghost(np.eye(4)[None], geo.translate(1, 0)[None])
    np.testing.assert_array_equal(single.posed[0], single.posed[1])


def test_forward_map_rest_pose_is_identity():
    rng = np.random.default_rng(1)
    rest = np.stack([random_rigid(rng) for _ in range(6)])
    p = init_params(6, seed=4)
    x = np.array([0.3, -0.8])
    np.testing.assert_allclose(forward_map(p, rest, rest, x), x, atol=1e-12)


def test_forward_map_one_hot_is_bone_map():
    rng = np.random.default_rng(2)
    rest = np.stack([random_rigid(rng) for _ in range(3)])
    posed = np.stack([random_rigid(rng) for _ in range(3)])
    x = np.array([0.5, 0.25])
    expected = posed[1] @ np.linalg.solve(rest[1], [0.5, 0.25, 0.0, 1.0])
    np.testing.assert_allclose(forward_map(one_hot_net(1, 3), rest, posed, x), expected[:2], atol=1e-12)


def test_forward_map_half_half_translation():
    rest = np.stack([np.eye(4), np.eye(4)])
    posed = np.stack([np.eye(4), geo.translate(2, 0)])
    net = constant_net([0.0, 0.0, -1000.0])
    x = np.array([0.7, -0.1])
    oracle = blend_matrices([0.5, 0.5], posed) @ np.array([0.7, -0.1, 0.0, 1.0])
    np.testing.assert_allclose(forward_map(net, rest, posed, x), oracle[:2], atol=1e-15)
    np.testing.assert_allclose(forward_map(net, rest, posed, x), x + [1.0, 0.0], atol=1e-15)


def test_inverse_rest_pose_is_identity():
    rig_frames = np.stack([geo.frame(0, 0, 0.2), geo.frame(1, 0.5, -0.4)])
    g = augment_ghost(rig_frames, rig_frames)
    x = np.array([-0.4, 1.1])
    np.testing.assert_allclose(inverse_map(init_params(2, seed=0), g, x), x, atol=1e-12)


def test_inverse_global_motion():
    rng = np.random.default_rng(3)
    t = random_rigid(rng)
    rest = np.stack([random_rigid(rng) for _ in range(4)])
    g = augment_ghost(rest, t @ rest)
    x = np.array([0.9, -0.3])
    expected = np.linalg.solve(t, [0.9, -0.3, 0.0, 1.0])[:2]
    np.testing.assert_allclose(inverse_map(init_params(4, seed=1), g, x), expected, atol=1e-9)


def half_turn_setup():
    g = augment_ghost(np.stack([np.eye(4)] * 2), np.stack([np.eye(4), geo.rot_z(np.pi)]))
    return g, constant_net([0.0, 0.0, 0.0], ghost=False)


def test_singular_blend_raises():
    g, net = half_turn_setup()
    for _ in range(3):
        with pytest.raises(SingularBlend):
            inverse_map(net, g, [0.3, 0.4])


def test_singular_blend_query_returns_zero_and_counts():
    g, net = half_turn_setup()
    grid = OccupancyGrid([-1, -1], [1, 1], np.ones((4, 4)))
    counter = BlendCounter()
    assert corrected_occupancy(net, g, grid, [0.3, 0.4], counter) == 0.0
    assert counter.count == 1
    corrected_occupancy(net, g, grid, [0.1, 0.1], counter)
    assert counter.count == 2


def test_blend_counter_is_thread_safe():
    c = BlendCounter()

    def work():
        for _ in range(10_000):
            c.add()

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert c.count == 80_000
    c.reset()
    assert c.count == 0


@given(st.integers(0, 2**31 - 1), st.integers(0, 3))
def test_round_trip_under_one_hot(seed, k):
    rng = np.random.default_rng(seed)
    rest = np.stack([random_rigid(rng) for _ in range(4)])
    posed = np.stack([random_rigid(rng) for _ in range(4)])
    net = one_hot_net(k, 4)
    x = rng.uniform(-2, 2, 2)
    back = inverse_map(net, augment_ghost(rest, posed), forward_map(net, rest, posed, x))
    np.testing.assert_allclose(back, x, atol=1e-9)


RAMP = OccupancyGrid([-2, -2], [2, 2], np.tile(np.linspace(0, 1, 9), (9, 1)))


def test_full_ghost_annihilates():
    g = augment_ghost(np.stack([np.eye(4)] * 2), np.stack([np.eye(4), geo.rot_z(0.4)]))
    full = OccupancyGrid([-2, -2], [2, 2], np.ones((5, 5)))
    assert corrected_occupancy(constant_net([-1000.0, -1000.0, 0.0]), g, full, [0.1, 0.2]) == 0.0


def test_rest_pose_without_ghost_reads_cache():
    frames = np.stack([np.eye(4), geo.frame(0.5, 0.0, 0.3)])
    net = constant_net([0.2, -0.1, -1000.0])
    x = [0.37, -0.61]
    assert corrected_occupancy(net, augment_ghost(frames, frames), RAMP, x) == query_grid(RAMP, x)


def test_half_ghost_halves_solid_cache():
    frames = np.stack([np.eye(4), np.eye(4)])
    full = OccupancyGrid([-2, -2], [2, 2], np.ones((5, 5)))
    net = constant_net([0.0, -1000.0, 0.0])
    assert corrected_occupancy(net, augment_ghost(frames, frames), full, [0.5, 0.5]) == 0.5


@given(st.integers(0, 2**31 - 1))
def test_rest_identity_property(seed):
    rng = np.random.default_rng(seed)
    frames = np.stack([random_rigid(rng) for _ in range(3)])
    net = init_params(3, hidden=(16,), seed=seed % 97)
    x = rng.uniform(-2, 2, size=(20, 2))
    res = query(net, augment_ghost(frames, frames), RAMP, x, BlendCounter())
    expected = (1 - res.weights[:, -1]) * np.array([query_grid(RAMP, p) for p in x])
    np.testing.assert_allclose(res.occupancy, expected, atol=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_output_range(seed):
    rng = np.random.default_rng(seed)
    rest = np.stack([random_rigid(rng) for _ in range(3)])
    posed = np.stack([random_rigid(rng) for _ in range(3)])
    grid = OccupancyGrid([-2, -2], [2, 2], rng.random((6, 6)))
    occ = query(init_params(3, hidden=(16,), seed=seed % 89), augment_ghost(rest, posed), grid,
                rng.uniform(-3, 3, size=(30, 2)), BlendCounter()).occupancy
    assert np.all((occ >= 0) & (occ <= 1))


@given(st.integers(0, 2**31 - 1))
def test_global_rigid_equivariance(seed):
    rng = np.random.default_rng(seed)
    rest = np.stack([random_rigid(rng) for _ in range(3)])
    t = random_rigid(rng)
    grid = OccupancyGrid([-3, -3], [3, 3], rng.random((7, 7)))
    net = init_params(3, hidden=(16,), seed=seed % 83)
    x = rng.uniform(-2, 2, size=(10, 2))
    res = query(net, augment_ghost(rest, t @ rest), grid, x, BlendCounter())
    pulled = np.linalg.solve(t, np.c_[x, np.zeros(10), np.ones(10)].T).T[:, :2]
    expected = (1 - res.weights[:, -1]) * np.array([query_grid(grid, p) for p in pulled])
    np.testing.assert_allclose(res.occupancy, expected, atol=1e-9)


@pytest.mark.parametrize("ghost", [True, False])
def test_parameter_gradient_matches_finite_differences(ghost):
    rng = np.random.default_rng(5)
    rest = np.stack([random_rigid(rng, 1.0) for _ in range(3)])
    posed = np.stack([random_rigid(rng, 1.0) for _ in range(3)])
    g = augment_ghost(rest, posed)
    grid = OccupancyGrid([-4, -4], [4, 4], rng.random((9, 9)))
    net = init_params(3, hidden=(16, 16), seed=2, ghost=ghost)
    net = net.with_flat(net.flat() + rng.normal(0, 0.2, net.flat().size))
    x = rng.uniform(-2, 2, size=(25, 2))
    up = rng.normal(size=25)
    res = query(net, g, grid, x, BlendCounter())
    grads = query_backward(net, g, res, up)
    analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in grads])
    theta = net.flat()

    def f(z):
        return float(up @ query(net.with_flat(z), g, grid, x, BlendCounter()).occupancy)

    for i in rng.choice(theta.size, 60, replace=False):
        e = np.zeros_like(theta)
        e[i] = 1e-6
        fd = (f(theta + e) - f(theta - e)) / 2e-6
        assert abs(fd - analytic[i]) <= 1e-4 * max(abs(fd), abs(analytic[i]), 1e-3), (i, analytic[i], fd)

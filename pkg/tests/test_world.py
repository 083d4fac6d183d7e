"""Ground-truth world: penalty contact, Coulomb modes, gripper, determinism."""

import numpy as np
import pytest

from real2sim.kinematics import RobotState
from real2sim.world import (
    GRAVITY,
    GroundTruthWorld,
    ObjectSpec,
    SurfaceSpec,
    WorldParams,
)


def make_world(chain, *, mu_s=0.5, mu_d=0.4, mass=0.3, noise=0.0, seed=0):
    table = SurfaceSpec("table", 0.76, [0.45, 0.0], [0.4, 0.4])
    box = ObjectSpec("box", [0.08, 0.08, 0.08], [0.42, 0.1, 0.81], mass, mu_s, mu_d)
    return GroundTruthWorld(
        chain, [table], [box], WorldParams(torque_noise=noise), seed=seed
    )


def test_objects_settle_to_penalty_depth(chain):
    world = make_world(chain, mass=0.3)
    box = world.objects["box"]
    # rest: N = m g, penetration = m g / k
    pen = 0.3 * GRAVITY / world.params.k_pen
    assert box.pose[2] == pytest.approx(0.76 + 0.04 - pen, abs=1e-12)


def grasp_in_place(world, chain, state):
    """Attach the box without moving it: contacts reflect its resting pose."""
    box = world.objects["box"]
    rest = box.pose.copy()
    box.pose = chain.tip_point(state.x).copy()
    world.gripper_command(state, close=True)
    box.pose = rest
    world.attachment.offset = rest - state.x.pos
    return box


def test_resting_normal_force_balances_weight(chain):
    # held at its settle depth the object still presses with exactly m g
    world = make_world(chain, mass=0.3)
    state = RobotState.at(chain, chain.home)
    grasp_in_place(world, chain, state)
    (contact,) = [c for c in world.contact_forces(state) if c.pair == "box/table"]
    assert contact.normal == pytest.approx(0.3 * GRAVITY, rel=1e-12)
    assert not contact.sliding
    np.testing.assert_allclose(contact.tangential, np.zeros(2), atol=1e-12)


def test_normal_force_is_stiffness_times_penetration(chain):
    world = make_world(chain)
    state = RobotState.at(chain, chain.home)
    box = grasp_in_place(world, chain, state)
    for extra in (1e-4, 5e-4):
        box.pose[2] -= extra
        (contact,) = [c for c in world.contact_forces(state) if c.pair == "box/table"]
        pen = 0.76 - (box.pose[2] - 0.04)
        assert contact.normal == pytest.approx(world.params.k_pen * pen, rel=1e-12)
        box.pose[2] += extra


def coulomb_probe(world, trial, v_lat):
    """Drive the stick/slip state machine for the box/table pair directly."""
    return world._coulomb("box/table", trial, 0.3 * GRAVITY, v_lat,
                          0.5, 0.4, update_modes=True)


def test_coulomb_stick_cancels_trial_below_bound(chain):
    world = make_world(chain)
    n = 0.3 * GRAVITY
    f, sliding = coulomb_probe(world, np.array([0.3 * n, 0.0]), 0.0)
    assert not sliding
    np.testing.assert_allclose(f, [-0.3 * n, 0.0], atol=1e-15)


def test_coulomb_breakaway_holds_static_bound_until_speed(chain):
    world = make_world(chain)
    n = 0.3 * GRAVITY
    over = np.array([0.51 * n, 0.0])
    # crossing the bound enters the transient: force exactly mu_s*N, not sliding
    f, sliding = coulomb_probe(world, over, 0.0)
    assert not sliding
    assert np.linalg.norm(f) == pytest.approx(0.5 * n, rel=1e-15)
    # still below breakaway speed: stays at the static bound
    f, sliding = coulomb_probe(world, over, 0.5 * world.params.breakaway_speed)
    assert not sliding
    assert np.linalg.norm(f) == pytest.approx(0.5 * n, rel=1e-15)
    # reaching breakaway speed: dynamic friction, sliding flagged
    f, sliding = coulomb_probe(world, over, world.params.breakaway_speed)
    assert sliding
    assert np.linalg.norm(f) == pytest.approx(0.4 * n, rel=1e-15)


def test_coulomb_breaking_restick_below_dynamic_bound(chain):
    world = make_world(chain)
    n = 0.3 * GRAVITY
    coulomb_probe(world, np.array([0.51 * n, 0.0]), 0.0)  # enter transient
    f, sliding = coulomb_probe(world, np.array([0.1 * n, 0.0]), 0.0)
    assert not sliding
    np.testing.assert_allclose(f, [-0.1 * n, 0.0], atol=1e-15)  # stuck again


def test_coulomb_sliding_restick_when_slow_and_inside_cone(chain):
    world = make_world(chain)
    n = 0.3 * GRAVITY
    over = np.array([0.51 * n, 0.0])
    coulomb_probe(world, over, 0.0)
    coulomb_probe(world, over, world.params.breakaway_speed)  # sliding now
    # fast and loaded above the dynamic bound: keeps sliding
    f, sliding = coulomb_probe(world, np.array([0.45 * n, 0.0]), 0.02)
    assert sliding
    # slow and inside the static cone: sticks
    f, sliding = coulomb_probe(world, np.array([0.45 * n, 0.0]), 0.0)
    assert not sliding
    np.testing.assert_allclose(f, [-0.45 * n, 0.0], atol=1e-15)


def test_coulomb_reaction_opposes_trial_direction(chain, rng):
    world = make_world(chain)
    n = 0.3 * GRAVITY
    for _ in range(20):
        trial = rng.standard_normal(2) * n
        f, _ = coulomb_probe(world, trial, rng.uniform(0, 0.02))
        if np.linalg.norm(trial) > 0:
            cos = float(np.dot(f, trial) / (np.linalg.norm(f) * np.linalg.norm(trial) + 1e-30))
            assert cos == pytest.approx(-1.0, abs=1e-9)
        world._slide_mode.clear()


def test_grasp_within_tolerance_attaches(chain):
    world = make_world(chain)
    box = world.objects["box"]
    state = RobotState.at(chain, chain.home)
    # teleport the box to the fingertip
    box.pose = chain.tip_point(state.x) + np.array([0.0, 0.0, 0.5 * world.params.grasp_tol])
    held = world.gripper_command(state, close=True)
    assert held == "box"
    assert world.attachment is not None


def test_grasp_outside_tolerance_closes_empty(chain):
    world = make_world(chain)
    state = RobotState.at(chain, chain.home)
    held = world.gripper_command(state, close=True)
    assert held is None
    assert any(e["kind"] == "close_empty" for e in world.events)


def test_release_snaps_to_support(chain):
    world = make_world(chain)
    box = world.objects["box"]
    state = RobotState.at(chain, chain.home)
    box.pose = chain.tip_point(state.x).copy()
    world.gripper_command(state, close=True)
    # hover the object just above the table and release
    box.pose = np.array([0.42, 0.1, 0.76 + 0.04 + 0.02])
    world.gripper_command(state, close=False)
    pen = box.mass * GRAVITY / world.params.k_pen
    assert box.pose[2] == pytest.approx(0.76 + 0.04 - pen, abs=1e-12)
    assert world.fault is None


def test_release_beyond_drop_tolerance_faults(chain):
    world = make_world(chain)
    box = world.objects["box"]
    state = RobotState.at(chain, chain.home)
    box.pose = chain.tip_point(state.x).copy()
    world.gripper_command(state, close=True)
    box.pose = np.array([0.42, 0.1, 0.76 + 0.04 + 2 * world.params.drop_tol])
    world.gripper_command(state, close=False)
    assert world.fault is not None
    assert "box" in world.fault


def test_attached_object_follows_tool(chain):
    world = make_world(chain)
    box = world.objects["box"]
    state = RobotState.at(chain, chain.home)
    box.pose = chain.tip_point(state.x).copy()
    world.gripper_command(state, close=True)
    offset = box.pose - state.x.pos
    state = world.step(state, np.zeros(chain.dof))
    np.testing.assert_allclose(box.pose, state.x.pos + offset, atol=1e-12)


def test_step_rejects_non_finite_command(chain):
    world = make_world(chain)
    state = RobotState.at(chain, chain.home)
    tau = np.zeros(chain.dof)
    tau[3] = np.nan
    out = world.step(state, tau)
    assert world.fault is not None
    assert out is state  # state unchanged


def test_noise_free_sensing_is_exact(chain):
    world = make_world(chain, noise=0.0)
    state = RobotState.at(chain, chain.home)
    tau = world.sense_external_torques(state)
    np.testing.assert_allclose(tau, np.zeros(chain.dof), atol=1e-12)


def test_same_seed_reproduces_noise_sequence(chain):
    draws = []
    for _ in range(2):
        world = make_world(chain, noise=0.05, seed=123)
        draws.append(np.array([world.draw_torque_noise() for _ in range(50)]))
    np.testing.assert_array_equal(draws[0], draws[1])


def test_from_dict_round_trip(chain):
    doc = {
        "name": "w",
        "surfaces": [{"name": "table", "height": 0.7, "center": [0.4, 0.0], "half_extent": [0.3, 0.3]}],
        "objects": [{"name": "cup", "size": [0.06, 0.06, 0.1], "pose": [0.4, 0.0, 0.76],
                     "mass": 0.2, "friction": [0.6, 0.5]}],
        "params": {"torque_noise": 0.01},
    }
    world = GroundTruthWorld.from_dict(doc, chain=chain, seed=1)
    assert world.params.torque_noise == 0.01
    assert world.objects["cup"].static_mu == 0.6
    assert world.surfaces[0].covers([0.4, 0.0])
    assert not world.surfaces[0].covers([0.9, 0.9])

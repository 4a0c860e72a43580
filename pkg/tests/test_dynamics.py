import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bipedlab.dynamics import (
    ActuatorModel,
    BatchSim,
    ContactModel,
    Terrain,
    bias_forces,
    contact_forces,
    contact_jacobian,
    default_biped,
    double_pendulum,
    foot_position,
    forward_dynamics,
    initial_state,
    inverse_dynamics,
    kinetic_energy,
    load_model,
    mass_matrix,
    model_from_dict,
    model_to_dict,
    pd_torque,
    potential_energy,
    single_pendulum,
    standing_height,
    step,
)
from bipedlab.errors import ConfigError, DynamicsInputError

BIPED = default_biped()
FRICTIONLESS = ActuatorModel(kp=0.0, kd=0.0, coulomb=0.0, viscous=0.0)


def random_config(rng, model, scale=1.0):
    q = rng.uniform(-scale, scale, model.n_v)
    v = rng.uniform(-2 * scale, 2 * scale, model.n_v)
    return q, v


angles = st.floats(-3.0, 3.0, allow_nan=False)
biped_q = st.lists(angles, min_size=BIPED.n_v, max_size=BIPED.n_v).map(np.array)


# ---------------------------------------------------------------- mass matrix
def test_single_pendulum_mass_matrix_matches_analytic():
    m, lc, inertia = 1.7, 0.23, 0.013
    model = single_pendulum(m, lc, inertia)
    for q in (0.0, 0.4, -2.1):
        M = mass_matrix(model, [q])
        assert M.shape == (1, 1)
        assert M[0, 0] == pytest.approx(inertia + m * lc ** 2, rel=1e-12)


def test_double_pendulum_mass_matrix_matches_textbook():
    m1, m2, l1, l2 = 1.2, 0.8, 0.5, 0.4
    model = double_pendulum(m1, m2, l1, l2)
    i1, i2 = m1 * l1 ** 2 / 12, m2 * l2 ** 2 / 12
    c1, c2 = l1 / 2, l2 / 2
    for q2 in (0.0, 0.7, -1.9):
        M = mass_matrix(model, [0.3, q2])
        m11 = i1 + i2 + m1 * c1 ** 2 + m2 * (l1 ** 2 + c2 ** 2 + 2 * l1 * c2 * np.cos(q2))
        m12 = i2 + m2 * (c2 ** 2 + l1 * c2 * np.cos(q2))
        m22 = i2 + m2 * c2 ** 2
        np.testing.assert_allclose(M, [[m11, m12], [m12, m22]], rtol=1e-12)


def test_floating_base_mass_block_is_total_mass():
    M = mass_matrix(BIPED, np.zeros(BIPED.n_v))
    np.testing.assert_allclose(M[:2, :2], BIPED.mass * np.eye(2), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(biped_q)
def test_mass_matrix_symmetric_positive_definite(q):
    M = mass_matrix(BIPED, q)
    assert np.max(np.abs(M - M.T)) <= 1e-14 * max(1.0, np.max(np.abs(M)))
    np.linalg.cholesky(M)


def test_mass_matrix_rejects_bad_input():
    with pytest.raises(DynamicsInputError):
        mass_matrix(BIPED, np.zeros(BIPED.n_v - 1))
    q = np.zeros(BIPED.n_v)
    q[2] = np.nan
    with pytest.raises(DynamicsInputError):
        mass_matrix(BIPED, q)


# ---------------------------------------------------------------- bias forces
def test_bias_at_rest_is_gravity():
    q = np.zeros(BIPED.n_v)
    q[3:] = BIPED.q_ref
    b = bias_forces(BIPED, q, np.zeros(BIPED.n_v))
    # generalized force needed to hold the robot up: +m g on the vertical base row
    assert b[0] == pytest.approx(0.0, abs=1e-12)
    assert b[1] == pytest.approx(BIPED.mass * BIPED.gravity, rel=1e-12)


def test_bias_without_gravity_or_velocity_is_zero(rng):
    for _ in range(10):
        q, _ = random_config(rng, BIPED)
        b = bias_forces(BIPED, q, np.zeros(BIPED.n_v), gravity=False)
        np.testing.assert_allclose(b, 0.0, atol=1e-14)


def test_bias_gravity_is_potential_gradient(rng):
    q, _ = random_config(rng, BIPED)
    g = bias_forces(BIPED, q, np.zeros(BIPED.n_v))
    h = 1e-6
    fd = np.array([(potential_energy(BIPED, q + h * e) - potential_energy(BIPED, q - h * e)) / (2 * h)
                   for e in np.eye(BIPED.n_v)])
    np.testing.assert_allclose(g, fd, atol=1e-7)


def test_bias_rejects_dimension_mismatch():
    with pytest.raises(DynamicsInputError):
        bias_forces(BIPED, np.zeros(BIPED.n_v), np.zeros(3))


def test_coriolis_matches_christoffel_symbols(rng):
    # b(q, v) without gravity equals C(q, v) v built from finite differences of M
    q, v = random_config(rng, BIPED)
    n = BIPED.n_v
    h = 1e-6
    dM = np.stack([(mass_matrix(BIPED, q + h * e) - mass_matrix(BIPED, q - h * e)) / (2 * h)
                   for e in np.eye(n)])  # dM[k] = dM/dq_k
    c = np.zeros(n)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                c[i] += 0.5 * (dM[k, i, j] + dM[j, i, k] - dM[i, j, k]) * v[j] * v[k]
    b = bias_forces(BIPED, q, v, gravity=False)
    np.testing.assert_allclose(b, c, atol=1e-6)


# ---------------------------------------------------------------- round trip
def test_forward_inverse_round_trip_1000_configs():
    rng = np.random.default_rng(7)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        q, v = random_config(rng, BIPED, 2.0)
        tau = rng.normal(0, 5, BIPED.n_v)
        qdd = forward_dynamics(BIPED, q, v, tau)
        back = inverse_dynamics(BIPED, q, v, qdd)
        worst = max(worst, np.linalg.norm(back - tau) / np.linalg.norm(tau))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-8
    assert elapsed < 5.0


# ---------------------------------------------------------------- kinematics
def test_contact_jacobian_matches_finite_difference(rng):
    for _ in range(20):
        q, v = random_config(rng, BIPED)
        for foot in range(len(BIPED.feet)):
            h = 1e-6
            fd = (foot_position(BIPED, q + h * v, foot) - foot_position(BIPED, q - h * v, foot)) / (2 * h)
            np.testing.assert_allclose(contact_jacobian(BIPED, q, foot) @ v, fd, atol=1e-5)


def test_base_translation_moves_feet_rigidly(rng):
    q, _ = random_config(rng, BIPED)
    v = np.zeros(BIPED.n_v)
    v[:2] = (0.7, -0.3)
    for foot in range(2):
        np.testing.assert_allclose(contact_jacobian(BIPED, q, foot) @ v, (0.7, -0.3), atol=1e-14)


def test_contact_jacobian_off_chain_columns_are_zero(rng):
    q, _ = random_config(rng, BIPED)
    names = BIPED.joint_names
    for foot, side in enumerate(("left", "right")):
        J = contact_jacobian(BIPED, q, foot)
        for k, name in enumerate(names):
            if side not in name:
                np.testing.assert_array_equal(J[:, 3 + k], 0.0)


@pytest.mark.parametrize("foot", [-1, 2, 1.0, "left"])
def test_contact_jacobian_rejects_bad_foot(foot):
    with pytest.raises(DynamicsInputError):
        contact_jacobian(BIPED, np.zeros(BIPED.n_v), foot)


# ---------------------------------------------------------------- contact law
def _state_at(q, v):
    return initial_state(BIPED, np.asarray(q, float), np.asarray(v, float))


def test_foot_above_ground_has_no_force():
    q = np.zeros(BIPED.n_v)
    q[3:] = BIPED.q_ref
    q[1] = standing_height(BIPED, BIPED.q_ref) + 0.01
    np.testing.assert_array_equal(contact_forces(BIPED, _state_at(q, np.zeros(BIPED.n_v))), 0.0)


def test_static_penetration_is_a_spring():
    q = np.zeros(BIPED.n_v)
    q[3:] = BIPED.q_ref
    d = 0.002
    q[1] = standing_height(BIPED, BIPED.q_ref) - d
    f = contact_forces(BIPED, _state_at(q, np.zeros(BIPED.n_v)))
    k_n = ContactModel().k_n
    np.testing.assert_allclose(f[:, 0], k_n * d, rtol=1e-9)
    np.testing.assert_allclose(f[:, 1], 0.0, atol=1e-12)


def test_damping_only_when_moving_into_ground():
    q = np.zeros(BIPED.n_v)
    q[3:] = BIPED.q_ref
    q[1] = standing_height(BIPED, BIPED.q_ref) - 0.002
    cm = ContactModel()
    down = np.zeros(BIPED.n_v)
    down[1] = -0.1
    up = -down
    f_down = contact_forces(BIPED, _state_at(q, down))
    f_up = contact_forces(BIPED, _state_at(q, up))
    np.testing.assert_allclose(f_down[:, 0], cm.k_n * 0.002 + cm.c_n * 0.1, rtol=1e-9)
    np.testing.assert_allclose(f_up[:, 0], cm.k_n * 0.002, rtol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.01, 2.0), st.floats(0.0005, 0.01))
def test_tangential_force_inside_friction_cone(vx, mu, depth):
    q = np.zeros(BIPED.n_v)
    q[3:] = BIPED.q_ref
    q[1] = standing_height(BIPED, BIPED.q_ref) - depth
    v = np.zeros(BIPED.n_v)
    v[0] = vx
    f = contact_forces(BIPED, _state_at(q, v), Terrain(mu=mu))
    assert np.all(np.abs(f[:, 1]) <= mu * f[:, 0])


def test_friction_cone_holds_along_simulated_trajectory(rng):
    sim = BatchSim(BIPED, 4)
    for i in range(4):
        q = np.zeros(BIPED.n_v)
        q[3:] = BIPED.q_ref
        q[1] = standing_height(BIPED, BIPED.q_ref)
        sim.load_state(i, initial_state(BIPED, q))
        sim.mu[i] = (0.05, 0.3, 1.0, 2.0)[i]
    for _ in range(300):
        targets = BIPED.q_ref + rng.uniform(-0.8, 0.8, (4, BIPED.n_joints))
        sim.advance(targets, 5)
        assert np.all(np.abs(sim.ft) <= sim.mu[:, None] * sim.fn)


# ---------------------------------------------------------------- actuator
def test_pd_torque_examples():
    act = ActuatorModel(kp=1.0, kd=0.0, coulomb=0.0, viscous=0.0)
    np.testing.assert_array_equal(pd_torque(act, [0.3], [0.3], [0.0], 2.5), [0.0])
    np.testing.assert_allclose(pd_torque(act, [0.1], [0.0], [0.0], 2.5), [0.1])
    big = ActuatorModel(kp=100.0, kd=0.0, coulomb=0.2, viscous=0.0)
    np.testing.assert_allclose(pd_torque(big, [1.0], [0.0], [0.0], 2.5), [2.5])
    # clamp happens before friction is subtracted
    np.testing.assert_allclose(pd_torque(big, [1.0], [0.0], [1.0], 2.5), [2.3])
    np.testing.assert_allclose(pd_torque(big, [-1.0], [0.0], [-1.0], 2.5), [-2.3])


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-20, 20))
def test_pd_term_never_exceeds_limit(target, q, qd):
    act = ActuatorModel(kp=5.0, kd=0.1, coulomb=0.0, viscous=0.0)
    assert abs(pd_torque(act, [target], [q], [qd], 2.5)[0]) <= 2.5


# ---------------------------------------------------------------- integrator
def test_free_fall_velocity():
    model = default_biped()
    q = np.zeros(model.n_v)
    q[1] = 5.0
    q[3:] = model.q_ref
    state = initial_state(model, q)
    for _ in range(500):
        state = step(model, FRICTIONLESS, state, model.q_ref)
    assert state.time == pytest.approx(0.5)
    assert state.v[1] == pytest.approx(-model.gravity * 0.5, abs=1e-6)
    assert state.v[0] == pytest.approx(0.0, abs=1e-12)


def test_double_pendulum_energy_drift_below_half_percent():
    model = double_pendulum()
    sim = BatchSim(model, 1, FRICTIONLESS)
    q0 = np.array([1.2, -0.8])
    sim.load_state(0, initial_state(model, q0))
    e0 = kinetic_energy(model, q0, np.zeros(2)) + potential_energy(model, q0)
    # reference height: energy relative to the lowest possible potential
    e_low = potential_energy(model, np.zeros(2))
    worst = 0.0
    for _ in range(5000):
        sim.advance(np.zeros((1, 2)), 1)
        e = kinetic_energy(model, sim.q[0], sim.v[0]) + potential_energy(model, sim.q[0])
        worst = max(worst, abs(e - e0))
    assert worst / (e0 - e_low) < 0.005


def test_delay_shifts_command_by_two_steps():
    model = double_pendulum()
    act = ActuatorModel(kp=5.0, kd=0.0, coulomb=0.0, viscous=0.0, delay=2)
    state = initial_state(model, command=np.zeros(2))
    taus = []
    for k in range(4):
        cmd = np.array([0.5, 0.0]) if k == 0 else np.zeros(2)
        state = step(model, act, state, cmd)
        taus.append(state.tau.copy())
    # the joint barely moves in 3 ms, so the shoulder torque is essentially kp * target
    assert abs(taus[0][0]) < 1e-3
    assert abs(taus[1][0]) < 1e-3
    assert taus[2][0] == pytest.approx(2.5, abs=1e-2)
    assert abs(taus[3][0]) < 0.05


def test_step_leaves_input_state_untouched():
    q = np.zeros(BIPED.n_v)
    q[1] = 1.0
    q[3:] = BIPED.q_ref
    s0 = initial_state(BIPED, q)
    before = s0.q.copy()
    step(BIPED, ActuatorModel(), s0, BIPED.q_ref)
    np.testing.assert_array_equal(s0.q, before)


def test_step_rejects_wrong_command_size():
    with pytest.raises(DynamicsInputError):
        step(BIPED, ActuatorModel(), initial_state(BIPED), np.zeros(3))


def test_trajectories_are_bit_identical_and_batch_independent(rng):
    targets = BIPED.q_ref + rng.uniform(-0.5, 0.5, (200, BIPED.n_joints))

    def run(n, row):
        sim = BatchSim(BIPED, n)
        q = np.zeros(BIPED.n_v)
        q[3:] = BIPED.q_ref
        q[1] = standing_height(BIPED, BIPED.q_ref)
        for i in range(n):
            sim.load_state(i, initial_state(BIPED, q))
        out = []
        for t in targets:
            sim.advance(np.tile(t, (n, 1)), 20)
            out.append(sim.q[row].copy())
        return np.array(out)

    a = run(1, 0)
    np.testing.assert_array_equal(a, run(1, 0))
    np.testing.assert_array_equal(a, run(3, 2))


def test_settled_standing_weight_on_feet():
    sim = BatchSim(BIPED, 1)
    q = np.zeros(BIPED.n_v)
    q[3:] = BIPED.q_ref
    q[1] = standing_height(BIPED, BIPED.q_ref)
    sim.load_state(0, initial_state(BIPED, q))
    sim.advance(BIPED.q_ref[None], 1000)
    assert np.all(sim.in_contact[0] > 0)
    assert sim.fn[0].sum() == pytest.approx(BIPED.mass * BIPED.gravity, rel=0.02)


# ---------------------------------------------------------------- model files
def test_model_dict_round_trip():
    assert model_from_dict(model_to_dict(BIPED)) == BIPED


def test_config_robot_file_matches_default():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "robot.toml"
    assert load_model(path) == BIPED


def test_model_validation():
    d = model_to_dict(BIPED)
    d["links"][1]["mass"] = -1.0
    with pytest.raises(ConfigError):
        model_from_dict(d)
    d = model_to_dict(BIPED)
    d["joints"][0]["lower"] = 2.0
    with pytest.raises(ConfigError):
        model_from_dict(d)

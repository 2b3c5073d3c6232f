import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from delayrnn.dynamics import (
    PRESETS,
    SystemSpec,
    Trajectory,
    flow_jacobian,
    flow_jacobian_batch,
    flow_map,
    flow_map_batch,
    lag1_autocorrelation,
    lv_step,
    preset,
    previous_value_nrmse,
    simulate,
    vector_field,
    vector_field_jacobian,
)
from delayrnn.errors import DegenerateSeriesError, DivergedError

LV = preset("lv")
L63 = preset("lorenz63")
DUF = preset("duffing")
L96 = preset("lorenz96")

finite = st.floats(-3, 3, allow_nan=False)


def test_lv_origin_fixed():
    np.testing.assert_array_equal(lv_step([0.0, 0.0], LV), [0.0, 0.0])


def test_lv_step_hand_values():
    np.testing.assert_allclose(lv_step([0.5, 0.5], LV), [0.42275, 0.67825], atol=1e-12)
    np.testing.assert_allclose(lv_step([0.6, 0.0], LV), [0.22392, 0.0], atol=1e-12)


def test_lv_flow_is_lv_step():
    z = np.array([0.3, 0.7])
    np.testing.assert_array_equal(flow_map(z, LV), lv_step(z, LV))


def test_lv_divergence_raises():
    with pytest.raises(DivergedError):
        lv_step([1e200, 1e200], LV)


def test_vector_field_hand_values():
    np.testing.assert_allclose(vector_field([1, 1, 1], L63), [0, 26, -5 / 3], atol=1e-12)
    np.testing.assert_allclose(vector_field(np.zeros(5), L96), np.full(5, 8.0))
    np.testing.assert_allclose(vector_field([0, 0, 1, 0], DUF), [0, 0.5, 0, 1.2], atol=1e-12)


def test_vector_field_rejects_discrete():
    with pytest.raises(ValueError):
        vector_field([0.1, 0.1], LV)


@given(st.lists(finite, min_size=5, max_size=5))
def test_l96_rotation_equivariance(z):
    z = np.array(z)
    np.testing.assert_allclose(vector_field(np.roll(z, 1), L96), np.roll(vector_field(z, L96), 1), atol=1e-12)


@given(finite, finite, st.floats(0, 2 * np.pi))
@settings(max_examples=30)
def test_duffing_circle_conserved(x, y, phase):
    z = np.array([x, y, np.cos(phase), np.sin(phase)])
    for _ in range(5):
        z1 = flow_map(z, DUF)
        assert abs(z1[2] ** 2 + z1[3] ** 2 - (z[2] ** 2 + z[3] ** 2)) < 1e-8
        z = z1


def _reference_flow(z, spec):
    sol = solve_ivp(lambda t, v: vector_field(v, spec), (0, spec.sample_dt), z, method="DOP853",
                    rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


def test_l63_substep_refinement():
    z = np.array([1.0, 1.0, 1.0])
    ref = _reference_flow(z, L63)
    errs = [np.abs(flow_map(z, dataclasses.replace(L63, substeps=s)) - ref).max() for s in (10, 20, 40)]
    # classical RK4: halving the step cuts the error by ~16
    assert 12 < errs[0] / errs[1] < 20 and 12 < errs[1] / errs[2] < 20
    fine = flow_map(z, dataclasses.replace(L63, substeps=1000))
    np.testing.assert_allclose(flow_map(z, L63), fine, atol=1e-6)
    np.testing.assert_allclose(fine, ref, atol=1e-10)


def test_lv_jacobian_at_origin():
    np.testing.assert_allclose(flow_jacobian([0, 0], LV), np.diag([0.933, 1.293]))


@pytest.mark.parametrize("name", ["lorenz63", "duffing", "lorenz96"])
def test_jacobian_small_dt_expansion(name):
    spec = dataclasses.replace(preset(name), sample_dt=1e-4, substeps=1)
    z = simulate(preset(name), 3, 1).states[0]
    J = flow_jacobian(z, spec)
    A = vector_field_jacobian(z, spec)
    dt = 1e-4
    first = np.eye(spec.dim) + A * dt
    # the remainder is the dt^2 term; it falls below 1e-6 unless |A| is large (Lorenz 63)
    assert np.abs(J - first).max() <= max(1e-6, np.abs(A @ A).max() * dt ** 2)
    half = dataclasses.replace(spec, sample_dt=dt / 2)
    r_half = np.abs(flow_jacobian(z, half) - np.eye(spec.dim) - A * dt / 2).max()
    assert 3.5 < np.abs(J - first).max() / r_half < 4.5


def _fd_jacobian(z, spec, eps=1e-6):
    M = len(z)
    J = np.empty((M, M))
    for j in range(M):
        e = np.zeros(M)
        e[j] = eps
        J[:, j] = (flow_map(z + e, spec) - flow_map(z - e, spec)) / (2 * eps)
    return J


def test_l63_jacobian_matches_finite_differences():
    z = np.array([1.0, 1.0, 1.0])
    J = flow_jacobian(z, L63)
    fd = _fd_jacobian(z, L63)
    assert np.max(np.abs(J - fd)) / np.max(np.abs(J)) < 1e-5


@pytest.mark.parametrize("name", ["lv", "lorenz63", "duffing", "lorenz96"])
def test_jacobian_chain_rule(name):
    spec = preset(name)
    z = simulate(spec, 1, 1).states[0]
    k = 4
    prod = np.eye(spec.dim)
    zk = z.copy()
    for _ in range(k):
        prod = flow_jacobian(zk, spec) @ prod
        zk = flow_map(zk, spec)
    if spec.is_discrete:
        def composed(v):
            for _ in range(k):
                v = flow_map(v, spec)
            return v
        fd = np.column_stack([(composed(z + e) - composed(z - e)) / 2e-7 for e in 1e-7 * np.eye(2)])
        np.testing.assert_allclose(prod, fd, rtol=1e-6, atol=1e-6 * np.abs(prod).max())
        return
    spec_k = dataclasses.replace(spec, sample_dt=k * spec.sample_dt, substeps=k * spec.substeps)
    np.testing.assert_allclose(flow_jacobian(z, spec_k), prod, rtol=1e-6, atol=1e-6 * np.abs(prod).max())


def test_batch_matches_single():
    Z = simulate(L63, 0, 5).states
    Z1, Js = flow_jacobian_batch(Z, L63)
    np.testing.assert_array_equal(flow_map_batch(Z, L63), Z1)
    for z, z1, J in zip(Z, Z1, Js):
        np.testing.assert_array_equal(flow_map(z, L63), z1)
        np.testing.assert_array_equal(flow_jacobian(z, L63), J)


def test_simulate_zero_transient_returns_initial_condition():
    traj = simulate(L63, 5, 1, 0)
    rng = np.random.default_rng(5)
    np.testing.assert_array_equal(traj.states[0], np.ones(3) + rng.standard_normal(3))


@pytest.mark.parametrize("name", list(PRESETS))
def test_simulate_deterministic(name):
    a = simulate(preset(name), 11, 50)
    b = simulate(preset(name), 11, 50)
    np.testing.assert_array_equal(a.states, b.states)
    assert not a.states.flags.writeable


def test_consecutive_rows_follow_flow_map():
    traj = simulate(DUF, 2, 10)
    for z0, z1 in zip(traj.states[:-1], traj.states[1:]):
        np.testing.assert_allclose(flow_map(z0, DUF), z1, atol=1e-12)


@pytest.mark.slow
def test_l63_variance_self_consistency():
    short = simulate(L63, 0, 20000, 10000).states.var(axis=0)
    long = simulate(L63, 1, 200000, 10000).states.var(axis=0)
    np.testing.assert_allclose(short, long, rtol=0.1)


def test_trajectory_csv_round_trip(tmp_path):
    traj = simulate(L96, 4, 30)
    path = tmp_path / "t.csv"
    text = traj.to_csv(path)
    assert text.splitlines()[0] == "t,z0,z1,z2,z3,z4"
    back = Trajectory.from_csv(path, L96, seed=4)
    np.testing.assert_array_equal(back.states, traj.states)
    assert back.sample_dt == pytest.approx(0.1)


def test_trajectory_rejects_non_finite():
    with pytest.raises(DivergedError):
        Trajectory(np.array([[np.nan, 0.0]]), 1.0, LV)


def test_spec_round_trip_and_validation():
    for spec in PRESETS.values():
        assert SystemSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        SystemSpec("lorenz63", {"sigma": 10.0})
    with pytest.raises(ValueError):
        dataclasses.replace(L63, observed=(0, 1, 2))
    with pytest.raises(KeyError):
        preset("henon")


def test_series_statistics():
    x = np.sin(np.linspace(0, 40, 4000))
    assert 0.99 < lag1_autocorrelation(x) <= 1
    assert previous_value_nrmse(x) < 0.05
    with pytest.raises(DegenerateSeriesError):
        lag1_autocorrelation(np.ones(10))
    with pytest.raises(DegenerateSeriesError):
        previous_value_nrmse(np.ones(10))


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=50))
def test_autocorrelation_bounded(xs):
    x = np.array(xs)
    if np.std(x) < 1e-6:
        return
    assert -1 - 1e-12 <= lag1_autocorrelation(x) <= 1 + 1e-12

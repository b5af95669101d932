import numpy as np
import pytest

from coupledwave.errors import CflViolation, EmptySubdomain, GridMismatch, NonFiniteState, ZeroInitialData
from coupledwave.grid import Interval, build_grid
from coupledwave.solver import (CoefficientSet, InitialData, Trajectory, add_noise, build_UV_fields,
                                energy, energy_drift, observe, solve_coupled_wave,
                                time_derivative_matrix, verify_wellposedness_bound)


def eigen_setup(n=101):
    g = build_grid(n, 1.0)
    coeffs = CoefficientSet(g, 1.0, 0.0, 0.0, 0.0, 0.0)
    init = InitialData.from_functions(g, lambda x: np.cos(np.pi * x), 0.0, 0.0, 0.0)
    return g, coeffs, init


def test_zero_data_gives_zero_trajectory():
    g = build_grid(21, 1.0)
    x = g.nodes
    coeffs = CoefficientSet(g, 1 + x, x, 1 - x, 0.3, 2.0)
    traj = solve_coupled_wave(g, coeffs, InitialData.from_functions(g), 1.0)
    assert not np.any(traj.data)
    t, E = energy(traj, coeffs.a)
    assert not np.any(E)


def test_eigenmode_second_order():
    errs = []
    for n in (51, 101):
        g, coeffs, init = eigen_setup(n)
        traj = solve_coupled_wave(g, coeffs, init, 1.0, 0.5 * g.h)
        exact = np.cos(np.pi * traj.times)[:, None] * np.cos(np.pi * g.nodes)[None, :]
        errs.append(np.max(np.abs(traj.y1 - exact)))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_time_step_divides_T():
    g, coeffs, init = eigen_setup(21)
    traj = solve_coupled_wave(g, coeffs, init, 1.0, 0.013)
    assert traj.T == pytest.approx(1.0, abs=1e-14)


def test_cfl_violation():
    g, coeffs, init = eigen_setup(21)
    with pytest.raises(CflViolation):
        solve_coupled_wave(g, coeffs, init, 1.0, 2 * g.h)


def test_blow_up_detected():
    g = build_grid(21, 1.0)
    coeffs = CoefficientSet(g, 1.0, -1e5, 0.0, 0.0, 0.0)
    init = InitialData.from_functions(g, 1.0)
    with pytest.raises(NonFiniteState) as exc:
        solve_coupled_wave(g, coeffs, init, 50.0)
    assert exc.value.step > 0


def test_energy_conserved_for_eigenmode():
    g, coeffs, init = eigen_setup(201)
    traj = solve_coupled_wave(g, coeffs, init, 2.0, 0.5 * g.h)
    assert energy_drift(traj, coeffs.a) < 1e-10


def test_antisymmetric_coupling_energy_finite():
    g = build_grid(51, 1.0)
    coeffs = CoefficientSet(g, 1.0, 0.0, 2.0, -2.0, 0.0)
    init = InitialData.from_functions(g, lambda x: np.cos(np.pi * x), 0.0, 1.0, 0.0)
    traj = solve_coupled_wave(g, coeffs, init, 2.0)
    _, E = energy(traj, coeffs.a)
    assert np.all(np.isfinite(E))
    assert energy_drift(traj, coeffs.a) > 1e-6


def test_wellposedness_ratio_near_one():
    g, coeffs, init = eigen_setup(101)
    traj = solve_coupled_wave(g, coeffs, init, 2.0)
    assert verify_wellposedness_bound(traj, init) == pytest.approx(1.0, rel=0.1)


def test_wellposedness_zero_data():
    g, coeffs, _ = eigen_setup(21)
    init = InitialData.from_functions(g)
    traj = solve_coupled_wave(g, coeffs, init, 1.0)
    with pytest.raises(ZeroInitialData):
        verify_wellposedness_bound(traj, init)


def test_wellposedness_random_bounded_coefficients(rng):
    g = build_grid(51, 1.0)
    c = rng.uniform(-1, 1, size=(4, 51))
    coeffs = CoefficientSet(g, 1.0, *c, M1=1.0)
    init = InitialData.from_functions(g, lambda x: np.cos(np.pi * x), 0.0, 1.0, 0.0)
    ratio = verify_wellposedness_bound(solve_coupled_wave(g, coeffs, init, 2.0), init)
    assert np.isfinite(ratio) and ratio > 0


def test_observe_identity_restriction():
    g, coeffs, init = eigen_setup(21)
    traj = solve_coupled_wave(g, coeffs, init, 1.0)
    obs = observe(traj, np.ones(21, bool), (0,), ("y1", "y2"))
    np.testing.assert_array_equal(obs.traces[("y1", 0)], traj.y1)
    np.testing.assert_array_equal(obs.traces[("y2", 0)], traj.y2)


def test_observe_empty():
    g, coeffs, init = eigen_setup(21)
    traj = solve_coupled_wave(g, coeffs, init, 1.0)
    with pytest.raises(EmptySubdomain):
        observe(traj, Interval(0.51, 0.52))


def test_time_derivative_exact_on_quadratics():
    t = np.linspace(0, 1, 11)
    D1 = time_derivative_matrix(11, 0.1, 1)
    D2 = time_derivative_matrix(11, 0.1, 2)
    np.testing.assert_allclose(D1 @ (t**2), 2 * t, atol=1e-12)
    np.testing.assert_allclose(D2 @ (t**2), 2.0, atol=1e-10)


def test_add_noise():
    g, coeffs, init = eigen_setup(21)
    obs = observe(solve_coupled_wave(g, coeffs, init, 1.0), np.ones(21, bool), (0, 1), ("y1",))
    assert add_noise(obs, 0.0, 3).traces[("y1", 0)] is obs.traces[("y1", 0)]
    noisy = add_noise(obs, 0.1, 3)
    W = np.outer(obs.time_weights, obs.space_weights)
    for k in obs.keys:
        rel = np.sqrt(np.sum(W * (noisy.traces[k] - obs.traces[k]) ** 2) / np.sum(W * obs.traces[k] ** 2))
        assert rel == pytest.approx(0.1, abs=1e-12)
    again = add_noise(obs, 0.1, 3)
    for k in obs.keys:
        np.testing.assert_array_equal(again.traces[k], noisy.traces[k])


def test_uv_fields_vanish():
    g, coeffs, init = eigen_setup(21)
    zero = Trajectory(g, 0.01, np.zeros((50, 2, 21)))
    uv = build_UV_fields(zero, np.ones(21))
    assert not np.any(uv.U) and not np.any(uv.V)
    traj = solve_coupled_wave(g, coeffs, init, 1.0)
    uv = build_UV_fields(traj, np.zeros(21))
    assert not np.any(uv.U) and not np.any(uv.V)
    w = traj - solve_coupled_wave(g, coeffs, init, 1.0)
    uv = build_UV_fields(w, np.ones(21))
    assert not np.any(uv.U) and not np.any(uv.V)


def test_uv_fields_grid_mismatch():
    g, coeffs, init = eigen_setup(21)
    traj = solve_coupled_wave(g, coeffs, init, 1.0)
    with pytest.raises(GridMismatch):
        build_UV_fields(traj, np.ones(20))


def test_trajectory_csv(tmp_path):
    g, coeffs, init = eigen_setup(5)
    traj = solve_coupled_wave(g, coeffs, init, 0.5)
    traj.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "node,time,y1,y2"
    assert len(lines) == 1 + traj.n_times * 5

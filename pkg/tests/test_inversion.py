from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from coupledwave.errors import ConvergenceFailure, CouplingViolation, EmptySubdomain, PreconditionError
from coupledwave.inversion import (AdmissibleSetSpec, LinearizedMap, ObservationSpec, build_linearized_map,
                                   check_coupling_condition, l2_inner, misfit, misfit_and_gradient,
                                   observe_setup, forward, project_admissible, reconstruct,
                                   relative_error, stability_svd, synthesize_data)


def test_coupling_condition_examples():
    mask = np.array([False, True, True, True, False])
    assert check_coupling_condition([0, 1.0, 0.8, 0.6, 0], mask, 0.5)
    assert check_coupling_condition([0, -1.0, -0.8, -0.6, 0], mask, 0.5)
    assert not check_coupling_condition([0, 1.0, -0.8, 0.6, 0], mask, 0.5)
    assert not check_coupling_condition([0, 1.0, 0.4, 0.6, 0], mask, 0.5)
    # values outside omega0 do not matter
    assert check_coupling_condition([-9, 1.0, 1.0, 1.0, 0], mask, 0.5)
    with pytest.raises(PreconditionError):
        check_coupling_condition([1.0] * 5, mask, 0.0)
    with pytest.raises(EmptySubdomain):
        check_coupling_condition([1.0] * 5, np.zeros(5, bool), 0.5)


KNOWN = np.array([False] * 6 + [True] * 4)


def _spec():
    return AdmissibleSetSpec(2.0, np.full(10, 1.0), np.full(10, -0.5), KNOWN)


@given(arrays(float, 10, elements=st.floats(-10, 10)), arrays(float, 10, elements=st.floats(-10, 10)))
def test_projection_idempotent_and_admissible(c11, c22):
    spec = _spec()
    p = project_admissible(c11, c22, spec)
    q = project_admissible(*p, spec)
    np.testing.assert_array_equal(p[0], q[0])
    np.testing.assert_array_equal(p[1], q[1])
    assert np.all(np.abs(p[0]) <= 2.0) and np.all(np.abs(p[1]) <= 2.0)
    assert np.all(p[0][KNOWN] == 1.0) and np.all(p[1][KNOWN] == -0.5)
    free = ~KNOWN & (np.abs(c11) <= 2.0)
    np.testing.assert_array_equal(p[0][free], c11[free])


def test_admissible_spec_rejects_large_known_values():
    with pytest.raises(PreconditionError):
        AdmissibleSetSpec(0.5, np.full(10, 1.0), np.zeros(10), KNOWN)


def test_observation_spec_validation():
    assert ObservationSpec(orders=(2, 1, 1)).orders == (1, 2)
    for kw in ({"region": "nowhere"}, {"orders": ()}, {"orders": (3,)}, {"components": ("y3",)}):
        with pytest.raises(PreconditionError):
            ObservationSpec(**kw)


def test_coupling_violation_named(small_problem):
    setup = replace(small_problem.setup, coeffs=replace(small_problem.coeffs, c21=0.0))
    with pytest.raises(CouplingViolation, match="coupling"):
        setup.validate()
    small_problem.setup.validate()


def test_misfit_zero_in_inverse_crime(small_problem):
    p = small_problem
    data = synthesize_data(p.setup, *p.truth, refine=1)
    J, g11, g22 = misfit_and_gradient(p.truth, p.setup, data)
    assert J == 0.0
    assert np.max(np.abs(g11)) <= 1e-8 and np.max(np.abs(g22)) <= 1e-8
    assert misfit(p.background, p.setup, data) > 0


def test_gradient_vanishes_on_known_set(small_problem):
    p = small_problem
    data = synthesize_data(p.setup, *p.truth, refine=1)
    _, g11, g22 = misfit_and_gradient(p.background, p.setup, data)
    known = p.layout.known_mask()
    assert np.all(g11[known] == 0) and np.all(g22[known] == 0)
    assert np.max(np.abs(g11[~known])) > 0


def test_gradient_matches_finite_differences(small_problem, rng):
    p = small_problem
    setup = replace(p.setup, alpha=1e-3)
    data = synthesize_data(setup, *p.truth, refine=1)
    c = p.background
    J0, g11, g22 = misfit_and_gradient(c, setup, data)
    unknown = setup.unknown
    for _ in range(3):
        d = [rng.standard_normal(p.grid.n_nodes) * unknown for _ in range(2)]
        eps = 1e-5
        Jp = misfit((c[0] + eps * d[0], c[1] + eps * d[1]), setup, data)
        Jm = misfit((c[0] - eps * d[0], c[1] - eps * d[1]), setup, data)
        fd = (Jp - Jm) / (2 * eps)
        ad = l2_inner(p.grid, (g11, g22), d)
        assert abs(fd - ad) <= 1e-5 * max(abs(fd), 1e-12)


def test_refined_data_close_to_coarse(small_problem):
    p = small_problem
    coarse = synthesize_data(p.setup, *p.truth, refine=1)
    fine = synthesize_data(p.setup, *p.truth_fns, refine=2, init_fns=p.init_fns)
    rel = fine.distance(coarse) / coarse.norm()
    assert 0 < rel < 0.05


def test_reconstruct_from_own_data_is_immediate(small_problem):
    p = small_problem
    data = synthesize_data(p.setup, *p.truth, refine=1)
    res = reconstruct(p.setup, data, p.truth)
    assert res.converged and res.iterations == 0
    assert relative_error(p.grid, (res.c11, res.c22), p.truth) == 0.0


def test_reconstruct_decreases_misfit(small_problem):
    p = small_problem
    data = synthesize_data(p.setup, *p.truth, refine=1)
    res = reconstruct(p.setup, data, p.background, max_iter=15)
    Js = [r.J for r in res.log]
    assert all(b <= a for a, b in zip(Js, Js[1:]))
    assert Js[-1] < 1e-2 * Js[0]
    assert relative_error(p.grid, (res.c11, res.c22), p.truth) < relative_error(p.grid, p.background, p.truth)


def test_budget_flag(small_problem):
    p = small_problem
    data = synthesize_data(p.setup, *p.truth, refine=1)
    res = reconstruct(p.setup, data, p.background, max_iter=2, tol=0.0)
    assert res.budget_exhausted and not res.converged and res.iterations == 2


def test_result_csv(tmp_path, small_problem):
    p = small_problem
    data = synthesize_data(p.setup, *p.truth, refine=1)
    res = reconstruct(p.setup, data, p.background, max_iter=2)
    res.log_to_csv(tmp_path / "log.csv")
    res.fields_to_csv(tmp_path / "fields.csv", p.truth)
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "iter,J,grad_norm,step"
    assert len((tmp_path / "fields.csv").read_text().splitlines()) == p.grid.n_nodes + 1


def test_relative_error_simple(small_problem):
    g = small_problem.grid
    one = np.ones(g.n_nodes)
    assert relative_error(g, (1.1 * one, one), (one, one)) == pytest.approx(0.1 / np.sqrt(2))


def test_linearized_map_is_linear_response(small_problem):
    p = small_problem
    basis = np.flatnonzero(p.setup.unknown)[::4]
    lmap = build_linearized_map(p.setup, *p.background, basis_nodes=basis)
    assert lmap.matrix.shape[1] == 2 * len(basis)
    # jobs do not change the matrix
    lmap2 = build_linearized_map(p.setup, *p.background, basis_nodes=basis, jobs=3)
    np.testing.assert_array_equal(lmap.matrix, lmap2.matrix)
    with pytest.raises(PreconditionError):
        build_linearized_map(p.setup, *p.background, basis_nodes=[p.grid.n_nodes - 1])


def test_zero_column_gives_zero_sigma():
    A = np.array([[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]])
    rep = stability_svd(A)
    assert rep.sigma_min == 0.0 and rep.condition == np.inf


def test_svd_identity():
    rep = stability_svd(np.eye(4))
    assert rep.sigma_min == pytest.approx(1.0) and rep.sigma_max == pytest.approx(1.0)
    assert rep.condition == pytest.approx(1.0)
    with pytest.raises(ConvergenceFailure):
        stability_svd(np.zeros((0, 0)))

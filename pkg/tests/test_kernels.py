import numpy as np
import pytest

from coupledwave import _pykernels, kernels
from coupledwave.grid import build_grid
from coupledwave.solver import flux_bands, transpose_bands

compiled = kernels.compiled_backend


def random_problem(rng, n=30, nsteps=60):
    g = build_grid(n, 1.0)
    a = 1.0 + 0.5 * rng.random(n)
    lower, diag, upper = flux_bands(a, g.h)
    c = [np.ascontiguousarray(rng.uniform(-1, 1, n)) for _ in range(4)]
    y = [np.ascontiguousarray(rng.standard_normal(n)) for _ in range(4)]
    return (lower, diag, upper), c, y, 0.4 * g.h / np.sqrt(a.max()), nsteps


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.skipif(compiled is None, reason="compiled extension not built")
def test_leapfrog_backends_agree(rng):
    bands, c, y, dt, nsteps = random_problem(rng)
    o1, f1 = compiled.leapfrog(*bands, *c, *y, dt, nsteps)
    o2, f2 = _pykernels.leapfrog(*bands, *c, *y, dt, nsteps)
    assert f1 == f2 == -1
    np.testing.assert_allclose(np.asarray(o1), o2, rtol=0, atol=1e-12)


@pytest.mark.skipif(compiled is None, reason="compiled extension not built")
def test_adjoint_backends_agree(rng):
    bands, c, y, dt, nsteps = random_problem(rng)
    Y, _ = _pykernels.leapfrog(*bands, *c, *y, dt, nsteps)
    G = rng.standard_normal(Y.shape)
    lt, dg, ut = transpose_bands(*bands)
    args = (lt, dg, ut, c[0], c[2], c[1], c[3], np.ascontiguousarray(Y), G, dt)
    e1 = compiled.leapfrog_adjoint(*args)
    e2 = _pykernels.leapfrog_adjoint(*args)
    for u, v in zip(e1, e2):
        np.testing.assert_allclose(np.asarray(u), v, rtol=1e-12, atol=1e-12)


def test_adjoint_is_derivative(rng):
    # <dJ/dc11, e> against a central difference of J = <G, Y(c)>
    bands, c, y, dt, nsteps = random_problem(rng, n=12, nsteps=25)
    G = rng.standard_normal((nsteps + 1, 2, 12))
    e = rng.standard_normal(12)

    def J(c11):
        Y, _ = _pykernels.leapfrog(*bands, c11, *c[1:], *y, dt, nsteps)
        return float(np.sum(G * Y))

    Y, _ = _pykernels.leapfrog(*bands, *c, *y, dt, nsteps)
    lt, dg, ut = transpose_bands(*bands)
    d11, _ = kernels.leapfrog_adjoint(lt, dg, ut, c[0], c[2], c[1], c[3], np.ascontiguousarray(Y), G, dt)
    eps = 1e-4
    fd = (J(c[0] + eps * e) - J(c[0] - eps * e)) / (2 * eps)
    assert float(np.dot(d11, e)) == pytest.approx(fd, rel=1e-6)


def test_nonfinite_step_reported():
    n = 8
    g = build_grid(n, 1.0)
    lower, diag, upper = flux_bands(np.ones(n), g.h)
    y = np.full(n, 1e308)
    z = np.zeros(n)
    _, failed = kernels.leapfrog(lower, diag, upper, z, z, z, z, y, z, y, z, 0.01, 5)
    assert failed == 1

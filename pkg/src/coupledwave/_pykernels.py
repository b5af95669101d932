"""Pure numpy time-stepping kernels.

Reference implementation of the compiled kernels in ``_kernels.pyx``; both
evaluate the same floating point expressions in the same order.

The spatial operator is tridiagonal: ``(D y)_i = diag_i y_i + lower_i y_{i-1}
+ upper_i y_{i+1}`` (``lower[0]`` and ``upper[-1]`` unused).  The coupling
matrix acts nodewise as ``[[c11, c12], [c21, c22]]``.
"""
import numpy as np


def _accel(lower, diag, upper, c11, c12, c21, c22, y1, y2):
    d1 = diag * y1
    d2 = diag * y2
    d1[1:] = d1[1:] + lower[1:] * y1[:-1]
    d2[1:] = d2[1:] + lower[1:] * y2[:-1]
    d1[:-1] = d1[:-1] + upper[:-1] * y1[1:]
    d2[:-1] = d2[:-1] + upper[:-1] * y2[1:]
    return d1 - (c11 * y1 + c12 * y2), d2 - (c21 * y1 + c22 * y2)


# overflow is reported through the returned failure step, as in the compiled kernel
@np.errstate(over="ignore", invalid="ignore")
def leapfrog(lower, diag, upper, c11, c12, c21, c22, y10, y20, v10, v20, dt, nsteps):
    """Leapfrog trajectory with a Taylor first step.

    Returns ``(out, failed)`` where ``out`` has shape ``(nsteps + 1, 2, n)``
    and ``failed`` is the first step index holding a non-finite value, or -1.
    """
    n = len(diag)
    dt2 = dt * dt
    half = 0.5 * dt2
    out = np.empty((nsteps + 1, 2, n))
    out[0, 0] = y10
    out[0, 1] = y20
    if nsteps == 0:
        return out, -1
    a1, a2 = _accel(lower, diag, upper, c11, c12, c21, c22, out[0, 0], out[0, 1])
    out[1, 0] = (y10 + dt * v10) + half * a1
    out[1, 1] = (y20 + dt * v20) + half * a2
    if not np.isfinite(np.abs(out[1]).sum()):
        return out, 1
    for k in range(1, nsteps):
        a1, a2 = _accel(lower, diag, upper, c11, c12, c21, c22, out[k, 0], out[k, 1])
        out[k + 1, 0] = (2.0 * out[k, 0] - out[k - 1, 0]) + dt2 * a1
        out[k + 1, 1] = (2.0 * out[k, 1] - out[k - 1, 1]) + dt2 * a2
        if not np.isfinite(np.abs(out[k + 1]).sum()):
            return out, k + 1
    return out, -1


def leapfrog_adjoint(lower_t, diag, upper_t, c11, c12_t, c21_t, c22, Y, G, dt):
    """Reverse sweep of :func:`leapfrog`.

    ``G[k]`` is the partial derivative of the objective with respect to the
    state at step ``k``; the transposed bands and swapped coupling are passed
    in by the caller.  Returns the derivatives with respect to the nodal
    values of ``c11`` and ``c22``.
    """
    nt, _, n = Y.shape
    dt2 = dt * dt
    half = 0.5 * dt2
    bar = np.array(G, dtype=float, copy=True)
    g11 = np.zeros(n)
    g22 = np.zeros(n)
    if nt < 2:
        return g11, g22
    for k in range(nt - 2, 0, -1):
        p1 = bar[k + 1, 0]
        p2 = bar[k + 1, 1]
        a1, a2 = _accel(lower_t, diag, upper_t, c11, c12_t, c21_t, c22, p1, p2)
        bar[k, 0] = bar[k, 0] + (2.0 * p1 + dt2 * a1)
        bar[k, 1] = bar[k, 1] + (2.0 * p2 + dt2 * a2)
        bar[k - 1, 0] = bar[k - 1, 0] - p1
        bar[k - 1, 1] = bar[k - 1, 1] - p2
        g11 = g11 - dt2 * (Y[k, 0] * p1)
        g22 = g22 - dt2 * (Y[k, 1] * p2)
    g11 = g11 - half * (Y[0, 0] * bar[1, 0])
    g22 = g22 - half * (Y[0, 1] * bar[1, 1])
    return g11, g22

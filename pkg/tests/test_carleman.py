import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coupledwave import carleman
from coupledwave.errors import (BetaGapViolation, EmptyInterval, MaximizerOutsideOmega0,
                                NonPositiveTau, OrderingViolation, PreconditionError, WeightOverflow)
from coupledwave.grid import Interval, ScalarField, build_grid

OMEGA = Interval(0.6, 1.0)
CENTRED = Interval(0.78, 0.82)


@pytest.fixture
def parabola():
    return carleman.build_psi_hat(build_grid(101, 1.0), OMEGA, CENTRED)


def params(lam=2.0, zeta=1.0, M=0.2, norm=1.0):
    return carleman.CarlemanParams(1.0, M, 2.0, 1.8, 2.0, lam, zeta, norm)


def test_psi_hat_parabola(parabola):
    x = parabola.grid.nodes
    np.testing.assert_allclose(parabola.values, np.where(x > 0.6, (x - 0.6) * (1 - x), 0.0), atol=1e-15)
    assert float(np.max(parabola.values)) == pytest.approx(0.04)
    assert x[np.argmax(parabola.values)] == pytest.approx(0.8)
    assert carleman.psi_hat_norm(OMEGA, CENTRED) == pytest.approx(0.04)


def test_psi_hat_sign(parabola):
    x = parabola.grid.nodes
    v = np.asarray(parabola.values)
    assert v[np.argmin(np.abs(x - 0.6))] == 0.0 and v[-1] == 0.0
    assert np.all(v[(x > 0.6 + 1e-9) & (x < 1 - 1e-9)] > 0)


def test_psi_hat_tilted_maximizer():
    g = build_grid(401, 1.0)
    psi = carleman.build_psi_hat(g, Interval(0.5, 1.0), Interval(0.7375, 0.7625))
    x = g.nodes
    assert x[np.argmax(psi.values)] == pytest.approx(0.75)
    assert float(np.max(psi.values)) == pytest.approx(carleman.psi_hat_norm(Interval(0.5, 1.0), Interval(0.7375, 0.7625)))


def test_psi_hat_maximizer_outside():
    with pytest.raises(MaximizerOutsideOmega0):
        carleman.build_psi_hat(build_grid(101, 1.0), OMEGA, Interval(0.5, 0.7))


def test_beta_gap_violation_when_O2_contains_maximizer(parabola):
    with pytest.raises(BetaGapViolation):
        carleman.compute_beta_constants(parabola, Interval(0.78, 0.86), Interval(0.88, 0.96))


def test_beta_constants(parabola):
    b1, b2 = carleman.compute_beta_constants(parabola, Interval(0.62, 0.66), Interval(0.76, 0.84))
    assert b1 == pytest.approx(0.0204)
    assert b2 == pytest.approx(0.0384)


def test_beta_degenerate_constant():
    g = build_grid(11, 1.0)
    with pytest.raises(BetaGapViolation):
        carleman.compute_beta_constants(ScalarField.constant(g, 1.0), Interval(0.1, 0.3), Interval(0.6, 0.8))


def test_M_interval():
    lo, hi = carleman.admissible_M_interval(0.2, 0.7, 1.0, 1.8)
    assert lo == pytest.approx(0.3 / 2.24) and hi == pytest.approx(0.8 / 3.24)
    assert (round(lo, 5), round(hi, 5)) == (0.13393, 0.24691)
    with pytest.raises(EmptyInterval) as exc:
        carleman.admissible_M_interval(0.2, 0.7, 1.0, 1.1)
    assert exc.value.lo == pytest.approx(0.3 / 0.21)
    assert carleman.admissible_M_interval(0.2, 1.0, 1.0, 1.8)[0] == 0.0


def test_levels_and_tau():
    lv = carleman.psi_levels(0.2, 0.7, 1.0, 0.2, 2.0, 1.8)
    np.testing.assert_allclose(lv.psi, (5.0, 9.0, 6.5, 5.76), rtol=1e-14)
    tau, zeta, L = carleman.tau_zeta_L(lv, 1.0, 2.0, 2.0, 2.0)
    assert tau == pytest.approx(1 - math.exp(-0.74), rel=1e-14)
    assert round(tau, 5) == 0.52289
    assert zeta == pytest.approx(16 / (4 * tau * math.exp(6.5)), rel=1e-14)
    assert round(zeta, 6) == 0.011501
    assert L == 32
    assert carleman.tau_identity_defect(lv, 1.0, tau) <= 1e-12


def test_levels_at_lower_M_endpoint_degenerate():
    lo, _ = carleman.admissible_M_interval(0.2, 0.7, 1.0, 1.8)
    with pytest.raises(OrderingViolation):
        carleman.psi_levels(0.2, 0.7, 1.0, lo * (1 - 1e-12), 2.0, 1.8)


def test_nonpositive_tau():
    lv = carleman.WeightLevels(0.2, 0.7, 5.0, 9.0, 6.0, 6.5)
    with pytest.raises(NonPositiveTau):
        carleman.tau_zeta_L(lv, 1.0, 2.0, 2.0, 2.0)


def test_params_checked():
    with pytest.raises(PreconditionError):
        carleman.CarlemanParams(0.5, 0.2, 2.0, 1.8, 2.0, 2.0, 1.0, 1.0)
    with pytest.raises(PreconditionError):
        carleman.CarlemanParams(1.0, 0.2, 2.0, 2.1, 2.0, 2.0, 1.0, 1.0)


def test_weight_eval_formulas():
    vals = np.array([0.0, 0.5, 1.0])
    ev = carleman.weight_eval(vals, params(), [-2.0, 0.0, 2.0])
    assert ev.psi[2, 1] == pytest.approx(9.0)
    assert ev.phi[2, 1] == pytest.approx(math.exp(9.0))
    np.testing.assert_allclose(ev.psi[:, 0], vals / 0.2)
    assert ev.psi[0, 1] == pytest.approx(4.0)
    np.testing.assert_allclose(ev.ell, np.exp(ev.psi))


def test_weight_overflow_reports_point():
    with pytest.raises(WeightOverflow) as exc:
        carleman.weight_eval(np.array([0.0, 1.0]), params(zeta=1.0), [0.0], materialize=True)
    assert exc.value.x == 1.0 and exc.value.s == 0.0
    ev = carleman.weight_eval(np.array([0.0, 1.0]), params(zeta=1e-3), [0.0], materialize=True)
    np.testing.assert_allclose(np.log(ev.theta), ev.log_theta)


def _lattice(n=21, ns=11):
    g = build_grid(n, 1.0)
    psi = carleman.build_psi_hat(g, Interval(0.0 + 1e-9, 1.0 - 1e-9), Interval(0.45, 0.55))
    p = params(zeta=0.5, norm=float(np.max(psi.values)))
    s = np.linspace(-2, 2, ns)
    return g, carleman.weight_eval(psi, p, s), p, s


def test_ratio_zero_fields():
    g, ev, p, s = _lattice()
    z = np.zeros((2, 21, 11), complex)
    rep = carleman.carleman_ratio_diagnostic(z, z, z, ev, p, g.h, np.zeros(21, bool))
    assert rep.degenerate and rep.ratio == 0.0


def test_ratio_field_in_omega0():
    g, ev, p, s = _lattice()
    x = g.nodes
    bump = np.exp(-((x - 0.5) / 0.05) ** 2)[:, None] * np.exp(-s**2)[None, :]
    U = np.stack([bump, 0.5 * bump]).astype(complex)
    z = np.zeros_like(U)
    om0 = (x > 0.35) & (x < 0.65)
    rep = carleman.carleman_ratio_diagnostic(U, z, z, ev, p, g.h, om0)
    assert not rep.degenerate and 0 < rep.ratio < math.inf
    # common scaling leaves the ratio unchanged, also far beyond double range
    big = carleman.carleman_ratio_diagnostic(U * 1e200, z, z, ev, p, g.h, om0)
    assert big.log_ratio == pytest.approx(rep.log_ratio, rel=1e-12, abs=1e-12)


def test_ratio_infinite_when_rhs_vanishes():
    g, ev, p, s = _lattice()
    U = np.ones((2, 21, 11), complex)
    z = np.zeros_like(U)
    rep = carleman.carleman_ratio_diagnostic(U, z, z, ev, p, g.h, np.zeros(21, bool))
    assert rep.degenerate and rep.ratio == math.inf


@given(st.floats(0.01, 0.3), st.floats(0.35, 0.95), st.floats(1.05, 1.95))
def test_M_interval_endpoints_formula(b1, b2, b0):
    try:
        lo, hi = carleman.admissible_M_interval(b1, b2, 1.0, b0)
    except EmptyInterval as exc:
        lo, hi = exc.lo, exc.hi
        assert lo >= hi
    assert lo == pytest.approx((1 - b2) / (b0**2 - 1))
    assert hi == pytest.approx((1 - b1) / b0**2)

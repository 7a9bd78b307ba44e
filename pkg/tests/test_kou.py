#!/usr/bin/env python3
# -*- coding: UTF-8 -*-

"""
Tests for the double-exponential jump reduction.
"""

import math

import numpy as np
import pytest  # type: ignore

from american_jumps.greens import BoundaryState, K1_closed, k1_kernel
from american_jumps.kou import (
    KouOperatorCoeffs,
    XiTabulation,
    dxi_K1_closed,
    kou_source_assembly,
    solve_P_from_u_closed,
    u_from_P,
)
from american_jumps.params import (
    DomainError,
    KouCurves,
    ParamCurve,
    ParamSet,
    build_time_change,
)

COEFFS = KouOperatorCoeffs(mu=5 / 12, beta=0.5, kappa=6.0, theta1=3.0, theta2=2.0)


def kou_params(lam: float = 1.0) -> ParamSet:
    kou = KouCurves(ParamCurve.constant(3.0), ParamCurve.constant(2.0), ParamCurve.constant(0.5))
    return ParamSet.constant(0.05, 0.0, 0.2, 0.5, 100.0, lam=lam).replace(kou=kou)


def gaussian(x: float) -> float:
    return math.exp(-x * x)


def gaussian_source(x: float) -> float:
    """
    u for P = e^{-x²}.
    """
    return u_from_P(COEFFS, gaussian(x), -2 * x * gaussian(x), (4 * x * x - 2) * gaussian(x))


def test_coefficients_from_params():
    coeffs = KouOperatorCoeffs.at(kou_params(), 0.25)
    assert coeffs.theta1 == 3.0
    assert coeffs.theta2 == 2.0
    assert coeffs.beta == pytest.approx(COEFFS.beta)
    assert coeffs.kappa == pytest.approx(COEFFS.kappa)
    with pytest.raises(ValueError):
        KouOperatorCoeffs.at(ParamSet.reference_model(K=60), 0.25)


def test_u_from_P():
    assert u_from_P(COEFFS, 0.0, 0.0, 0.0) == 0.0
    # e^x is an eigenfunction: u = (θ₁ - 1)(θ₂ + 1) e^x.
    x = np.linspace(-1, 1, 5)
    u = u_from_P(COEFFS, np.exp(x), np.exp(x), np.exp(x))
    assert np.allclose(u, 6.0 * np.exp(x), rtol=1e-15)


@pytest.mark.parametrize("x", [-2.0, -1.5, -0.3, 0.0, 1.0, 2.5])
def test_closed_form_recovers_P(x: float):
    x_B = -2.0
    recovered = solve_P_from_u_closed(COEFFS, gaussian_source, x_B, gaussian(x_B), x)
    assert recovered == pytest.approx(gaussian(x), rel=1e-7, abs=1e-10)


def test_homogeneous_solution_decays_like_theta2():
    for x in (0.0, 0.5, 3.0):
        P = solve_P_from_u_closed(COEFFS, lambda k: 0.0, 0.0, 2.0, x)
        assert P == pytest.approx(2.0 * math.exp(-2.0 * x), rel=1e-12)


def test_closed_form_errors():
    with pytest.raises(DomainError):
        solve_P_from_u_closed(COEFFS, gaussian_source, 0.0, 1.0, -0.1)
    with pytest.raises(ValueError):
        solve_P_from_u_closed(COEFFS._replace(theta1=1.0), gaussian_source, 0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        solve_P_from_u_closed(COEFFS._replace(theta2=0.0), gaussian_source, 0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        # Grows too fast for the upper tail.
        solve_P_from_u_closed(COEFFS, lambda k: math.exp(5 * k), 0.0, 1.0, 0.5)


@pytest.mark.parametrize("xi", [-0.2, 0.0, 0.3])
def test_dxi_K1_matches_finite_differences(xi: float):
    p = ParamSet.reference_model(K=60)
    tc = build_time_change(p)
    tau, s, x, x_B = 0.08, 0.03, 0.1, -0.3
    y = x_B + tc.at_tau(tau)[1]
    h = 1e-3

    def K1(at: float) -> float:
        return K1_closed(tc, p, tau, x, s, at, x_B, y).real

    expected = (K1(xi - 2 * h) - 8 * K1(xi - h) + 8 * K1(xi + h) - K1(xi + 2 * h)) / (12 * h)
    assert dxi_K1_closed(tc, p, tau, x, s, xi, x_B, y) == pytest.approx(
        expected, rel=1e-5, abs=1e-10
    )
    with pytest.raises(ValueError):
        dxi_K1_closed(tc, p, tau, x, tau, xi, x_B, y)


def kou_boundary(p: ParamSet) -> BoundaryState:
    tc = build_time_change(p)
    taus = np.linspace(0.0, tc.tau_max, 6)
    x_B = -0.1 * np.sqrt(taus / tc.tau_max)
    return BoundaryState.synthetic(p, tc, taus, x_B, np.full(len(taus), 50.0))


def decaying_price(s: float, xi: np.ndarray) -> np.ndarray:
    return 10.0 * np.exp(-(xi - xi[0]))


def test_source_vanishes_without_jumps():
    p = kou_params(lam=0.0)
    bs = kou_boundary(p)
    tabulation = XiTabulation.from_function(bs, decaying_price, 6.0, 61)
    tau = float(bs.tau_nodes[-1])
    x = float(bs.x_B[-1]) + 0.2
    assert kou_source_assembly(bs, bs.time_change, p, tau, x, tabulation) == 0.0


def test_source_matches_the_form_before_integration_by_parts():
    """
    -β∫∂_ξ𝒦₁ P dξ minus the edge term equals β∫𝒦₁ ∂_ξP dξ.
    """
    p = kou_params()
    bs = kou_boundary(p)
    tc = bs.time_change
    tabulation = XiTabulation.from_function(bs, decaying_price, 6.0, 1201)
    tau = float(bs.tau_nodes[-1])
    x = float(bs.x_B[-1]) + 0.2
    assembled = kou_source_assembly(bs, tc, p, tau, x, tabulation)

    t, F, _h = tc.at_tau(tau)
    phi = float(p.phi(t))
    x_B, y = float(bs.xB_at(tau)), float(bs.y_at(tau))
    time_weights = np.zeros(len(bs))
    steps = np.diff(bs.tau_nodes)
    time_weights[:-1] += 0.5 * steps
    time_weights[1:] += 0.5 * steps
    beta, kappa = COEFFS.beta, COEFFS.kappa

    expected = 0.0
    for j in range(len(bs) - 1):
        omega = tau - float(bs.tau_nodes[j])
        xi = tabulation.xi[j]
        kernel = k1_kernel(x, xi, x_B, y, F, float(bs.f_at[j]), phi, omega)
        P = tabulation.values[j]
        # ∂_ξP = -P for the decaying profile.
        body = np.sum(tabulation.weights * kernel * (kappa * P - beta * P))
        expected += time_weights[j] / float(bs.h_at[j]) * body

    assert assembled != 0.0
    assert assembled == pytest.approx(expected, rel=2e-2)


def test_source_errors():
    p = kou_params()
    bs = kou_boundary(p)
    tabulation = XiTabulation.from_function(bs, decaying_price, 6.0, 61)
    tau = float(bs.tau_nodes[-1])
    with pytest.raises(DomainError):
        kou_source_assembly(bs, bs.time_change, p, tau, float(bs.x_B[-1]) - 0.1, tabulation)
    with pytest.raises(ValueError):
        kou_source_assembly(
            bs, bs.time_change, p.replace(kou=None), tau, float(bs.x_B[-1]), tabulation
        )

#!/usr/bin/env python3
# -*- coding: UTF-8 -*-

"""
Tests for pricing in the continuation region.
"""

import math

import numpy as np
import pytest  # type: ignore
from scipy import integrate  # type: ignore

from american_jumps.greens import BoundaryState, G_interior, StateError
from american_jumps.params import DomainError, ParamSet, TimeChange
from american_jumps.pricer import (
    PriceQuery,
    PriceTable,
    _Frame,
    _price_at_end,
    _price_from_theta,
    intrinsic,
    price_at,
    price_curve,
    price_query,
    theta_source,
    verify_ode_residual,
)
from american_jumps.typedefs import Time
from american_jumps.volterra import init_node0

# Spots at t = 0: in the exercise region, near the money, and out of the money.
SPOTS = [20.0, 55.0, 60.0, 70.0, 90.0]


def test_table_layout(reference_prices: PriceTable, reference_boundary: BoundaryState):
    assert reference_prices.xi.shape == (len(reference_boundary), 30)
    assert np.array_equal(reference_prices.xi[:, 0], reference_boundary.x_B)
    assert reference_prices.rows == len(reference_boundary)
    assert np.all(reference_prices.values[0] == 0.0)
    assert np.all(np.isfinite(reference_prices.values))


def test_table_needs_a_solved_boundary(
    reference_params: ParamSet, reference_time_change: TimeChange
):
    bs = init_node0(reference_params, reference_time_change)
    with pytest.raises(StateError):
        PriceTable(bs, reference_time_change, reference_params)


def test_table_needs_enough_points(
    reference_boundary: BoundaryState, reference_params: ParamSet, reference_time_change: TimeChange
):
    with pytest.raises(ValueError):
        PriceTable(reference_boundary, reference_time_change, reference_params, xi_points=4)


def test_expiry_price_is_intrinsic(
    reference_boundary: BoundaryState, reference_params: ParamSet, reference_time_change: TimeChange
):
    for x in (-0.5, 0.0, 0.5):
        price = price_at(reference_boundary, reference_time_change, reference_params, 0.0, x)
        assert price == float(intrinsic(reference_params, x))


@pytest.mark.parametrize("node", [3, 6, 10])
def test_exercise_region_is_intrinsic(
    reference_boundary: BoundaryState,
    reference_params: ParamSet,
    reference_time_change: TimeChange,
    reference_prices: PriceTable,
    node: int,
):
    tau = float(reference_boundary.tau_nodes[node])
    x = float(reference_boundary.x_B[node]) - 0.2
    price = price_at(
        reference_boundary, reference_time_change, reference_params, tau, x, reference_prices
    )
    assert price == pytest.approx(60.0 - 60.0 * math.exp(x), rel=1e-14)


@pytest.mark.parametrize("node", [3, 6, 10])
def test_price_is_continuous_at_the_boundary(
    reference_boundary: BoundaryState,
    reference_params: ParamSet,
    reference_time_change: TimeChange,
    reference_prices: PriceTable,
    node: int,
):
    tau = float(reference_boundary.tau_nodes[node])
    x_B = float(reference_boundary.x_B[node])
    inside = price_at(
        reference_boundary,
        reference_time_change,
        reference_params,
        tau,
        x_B + 1e-6,
        reference_prices,
    )
    assert inside == pytest.approx(60.0 - 60.0 * math.exp(x_B), abs=1e-3)


def test_query(reference_prices: PriceTable):
    result = price_query(reference_prices, PriceQuery(Time(0.0), SPOTS))
    assert result.prices.shape == (len(SPOTS),)
    assert np.all(np.isfinite(result.prices))
    assert result.boundary_value == pytest.approx(reference_prices.bs.S_B[-1])

    exercised = result.diagnostics.exercised
    assert list(exercised) == [S <= result.boundary_value for S in SPOTS]
    assert result.prices[0] == pytest.approx(60.0 - 20.0)
    assert result.diagnostics.residuals[0] == 0.0
    assert np.all(np.isfinite(result.diagnostics.residuals))
    assert result.diagnostics.ode_residual == result.diagnostics.residuals.max()


def test_query_at_expiry_is_intrinsic(reference_prices: PriceTable):
    result = price_query(reference_prices, PriceQuery(Time(1.0), SPOTS), check_ode=False)
    assert np.all(result.diagnostics.exercised)
    assert result.boundary_value == 60.0
    assert np.allclose(result.prices, [max(60.0 - S, 0.0) for S in SPOTS], rtol=0, atol=1e-12)


def test_price_curve_matches_query(reference_prices: PriceTable):
    curve = price_curve(reference_prices, 0.0, SPOTS)
    result = price_query(reference_prices, PriceQuery(Time(0.0), SPOTS), check_ode=False)
    assert curve == list(result.prices)


@pytest.mark.parametrize(
    "query, error",
    [
        (PriceQuery(Time(0.0), [60.0, 0.0]), ValueError),
        (PriceQuery(Time(0.0), [-1.0]), ValueError),
        (PriceQuery(Time(1.5), [60.0]), DomainError),
    ],
)
def test_bad_queries(reference_prices: PriceTable, query: PriceQuery, error):
    with pytest.raises(error):
        price_query(reference_prices, query)


def test_ode_residual_needs_five_points(
    reference_boundary: BoundaryState,
    reference_params: ParamSet,
    reference_time_change: TimeChange,
    reference_prices: PriceTable,
):
    tau = float(reference_boundary.tau_nodes[-1])
    x_B = float(reference_boundary.x_B[-1])
    xs = x_B + np.linspace(0.05, 0.5, 5)
    residual = verify_ode_residual(
        reference_boundary, reference_time_change, reference_params, tau, xs, reference_prices
    )
    assert math.isfinite(residual)
    assert residual >= 0.0
    with pytest.raises(ValueError):
        verify_ode_residual(
            reference_boundary,
            reference_time_change,
            reference_params,
            tau,
            xs[:4],
            reference_prices,
        )


def test_theta_source(
    reference_boundary: BoundaryState, reference_params: ParamSet, reference_time_change: TimeChange
):
    tau = float(reference_boundary.tau_nodes[5])
    x_B = float(reference_boundary.x_B[5])
    values = theta_source(
        reference_boundary, reference_time_change, reference_params, tau, x_B + np.array([0.1, 0.2])
    )
    assert values.shape == (2,)
    assert np.all(np.isfinite(values))
    scalar = theta_source(
        reference_boundary, reference_time_change, reference_params, tau, x_B + 0.1
    )
    assert scalar == pytest.approx(values[0])
    with pytest.raises(DomainError):
        theta_source(reference_boundary, reference_time_change, reference_params, tau, x_B - 0.1)


def test_ode_residual_on_the_solved_case(
    reference_boundary: BoundaryState,
    reference_params: ParamSet,
    reference_time_change: TimeChange,
    reference_prices: PriceTable,
):
    tau = float(reference_boundary.tau_nodes[-1])
    x_B = float(reference_boundary.x_B[-1])
    xs = x_B + np.linspace(0.05, 2.0, 5)
    residual = verify_ode_residual(
        reference_boundary, reference_time_change, reference_params, tau, xs, reference_prices
    )
    assert residual <= 1e-5


MANUFACTURED = _Frame(tau=0.05, t=0.5, F=0.01, h=0.97, phi=0.3, a_j=0.08, x_B=-0.3, y=-0.29)


def manufactured_price(p: ParamSet, frame: _Frame, decay: float):
    """
    P(x) = P_B e^{-β(x - x_B)} and the Θ that makes it solve
    P + a e^{-φx} ∫_{x_B}^{x} e^{φη} P dη = e^{-φx} Θ.
    """
    P_B = p.S_star * (math.exp(p.k) - math.exp(frame.x_B))
    rate = frame.phi - decay

    def price(x):
        return P_B * np.exp(-decay * (x - frame.x_B))

    def theta(x):
        running = P_B * np.exp(decay * frame.x_B) * (
            np.exp(rate * x) - math.exp(rate * frame.x_B)
        ) / rate
        return np.exp(frame.phi * x) * price(x) + frame.a_j * running

    return price, theta


@pytest.mark.parametrize("decay", [0.4, 1.5])
def test_pricing_formula_recovers_a_manufactured_price(reference_params: ParamSet, decay: float):
    frame = MANUFACTURED
    price, theta = manufactured_price(reference_params, frame, decay)
    grid = frame.x_B + np.linspace(0.0, 2.0, 2049)

    at_end = _price_at_end(reference_params, frame, grid, theta(grid))
    assert at_end == pytest.approx(float(price(grid[-1])), rel=1e-8)

    along = _price_from_theta(reference_params, frame, grid, theta(grid))
    assert np.allclose(along, price(grid), rtol=1e-8, atol=0.0)


def test_theta_source_matches_quadrature(
    reference_params: ParamSet, reference_time_change: TimeChange
):
    """
    Θ(τ, x) = S_*(e^k - e^{x_B})e^{φx_B} + h ∫_{x_B}^{x} e^{φη} G(τ, η + F) dη
    without the jump source, with G itself by adaptive quadrature.
    """
    tc, p = reference_time_change, reference_params
    taus = np.linspace(0.0, 0.05, 3)
    x_B = -0.3 * np.sqrt(taus / tc.tau_max)
    bs = BoundaryState.synthetic(p, tc, taus, x_B, np.array([30.0, 42.0, 51.0]))
    tau = float(taus[-1])
    t, F, h = tc.at_tau(tau)
    phi = float(p.phi(t))
    lower = float(x_B[-1])
    x = lower + 0.3

    integral, _error = integrate.quad(
        lambda eta: math.exp(phi * eta) * G_interior(bs, tc, p, tau, eta + F),
        lower,
        x,
        epsabs=1e-12,
        epsrel=1e-10,
        limit=100,
    )
    base = p.S_star * (math.exp(p.k) - math.exp(lower)) * math.exp(phi * lower)
    assert theta_source(bs, tc, p, tau, x) == pytest.approx(base + h * integral, rel=1e-7)


def test_theta_source_on_the_boundary(
    reference_boundary: BoundaryState, reference_params: ParamSet, reference_time_change: TimeChange
):
    tau = float(reference_boundary.tau_nodes[4])
    x_B = float(reference_boundary.x_B[4])
    phi = float(reference_boundary.phi_at[4])
    p = reference_params
    expected = p.S_star * (math.exp(p.k) - math.exp(x_B)) * math.exp(phi * x_B)
    value = theta_source(reference_boundary, reference_time_change, p, tau, x_B)
    assert value == pytest.approx(expected, rel=1e-12)


PROPERTY_SPOTS = np.linspace(48.0, 90.0, 15)


@pytest.fixture(scope="module")
def prices_at_time_zero(reference_prices: PriceTable) -> np.ndarray:
    return np.array(price_curve(reference_prices, 0.0, list(PROPERTY_SPOTS)))


def test_prices_fall_with_the_spot(prices_at_time_zero: np.ndarray):
    assert np.all(np.diff(prices_at_time_zero) <= 1e-10 * 60.0)


def test_prices_dominate_exercise(prices_at_time_zero: np.ndarray):
    exercise = np.maximum(60.0 - PROPERTY_SPOTS, 0.0)
    assert np.all(prices_at_time_zero >= exercise - 1e-8 * 60.0)
    assert np.all(prices_at_time_zero <= 60.0)


def test_price_vanishes_far_out_of_the_money(
    reference_boundary: BoundaryState,
    reference_params: ParamSet,
    reference_time_change: TimeChange,
    reference_prices: PriceTable,
):
    tau = float(reference_boundary.tau_nodes[-1])
    x_B = float(reference_boundary.x_B[-1])
    near, far = (
        price_at(
            reference_boundary,
            reference_time_change,
            reference_params,
            tau,
            x_B + offset,
            reference_prices,
        )
        for offset in (1.0, 40.0)
    )
    assert abs(far) < 1e-3 * near

"""
The American Put price in the continuation region.

Once the boundary is known, u = φP + P_x is known up to the jump source,
and P solves a first-order linear ODE in x:

    P + a_j e^{-φx} ∫_{x_B}^{x} e^{φη} P dη = e^{-φx} Θ(τ, x)

with Θ assembled from the boundary value, the closed-form η-integrals of
the Green's function and the jump source over past times. The price is
then a single η-quadrature of Θ.
"""

import logging
import math
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate  # type: ignore

from .greens import (
    SQRT_PI,
    BoundaryState,
    G_interior,
    StateError,
    i_integrals_arrays,
    k1_kernel,
)
from .params import DomainError, ParamSet, TimeChange, coeffs_exponential
from .typedefs import Time

logger = logging.getLogger(__name__)

XI_TRUNCATION = 4.0
XI_POINTS = 30
BASIS_LENGTH = 10.0
# Fine-grid points per ξ-interval when a table row is built.
REFINEMENT = 4
# Gauss–Legendre order per sub-interval of the s-integrals.
GAUSS_ORDER = 24
SIMPSON_START = 33
SIMPSON_RTOL = 1e-9
SIMPSON_MAX_POINTS = 2**14 + 1
# Step of the 4th-order central difference for P_x.
DIFFERENCE_STEP = 1e-3


class _Frame(NamedTuple):
    """
    Everything at backward time τ that Θ needs.
    """

    tau: float
    t: float
    F: float
    h: float
    phi: float
    a_j: float
    x_B: float
    y: float


def _frame(bs: BoundaryState, tc: TimeChange, p: ParamSet, tau: float) -> _Frame:
    if bs.n_valid == 0:
        raise StateError("the boundary has not been solved")
    bs._check_tau(tau)
    t, F, h = tc.at_tau(tau)
    return _Frame(
        tau=tau,
        t=t,
        F=F,
        h=h,
        phi=float(p.phi(t)),
        a_j=coeffs_exponential(p, t).a_j,
        x_B=float(bs.xB_at(tau)),
        y=float(bs.y_at(tau)),
    )


def _past_grid(bs: BoundaryState, tau: float) -> np.ndarray:
    """
    Committed nodes strictly before τ, followed by τ itself.
    """
    n = bs.n_committed
    past = bs.tau_nodes[:n][bs.tau_nodes[:n] < tau]
    return np.append(past, tau)


def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    weights = np.zeros(len(nodes))
    steps = np.diff(nodes)
    weights[:-1] += 0.5 * steps
    weights[1:] += 0.5 * steps
    return weights


class PriceTable:
    """
    P(s, ξ) on a ξ-grid at every committed node: ξ_m = x_B(s) + 4L·m/(n-1).

    Rows are built in order because row i needs the rows before it for
    the jump source. Row 0 is zero: at expiry the Put is worthless above
    the strike.
    """

    def __init__(
        self,
        bs: BoundaryState,
        tc: TimeChange,
        p: ParamSet,
        xi_truncation: float = XI_TRUNCATION,
        xi_points: int = XI_POINTS,
        L: float = BASIS_LENGTH,
    ) -> None:
        if not bs.is_solved:
            raise StateError("the boundary must be fully solved before tabulating prices")
        if xi_points < 5:
            raise ValueError(f"need at least 5 ξ points, got {xi_points}")
        self.bs = bs
        self.tc = tc
        self.params = p
        self.span = xi_truncation * L
        self.xi_points = xi_points

        offsets = np.linspace(0.0, self.span, xi_points)
        self.xi = bs.x_B[: len(bs), None] + offsets[None, :]
        self.xi_weights = _trapezoid_weights(offsets)
        self.values = np.zeros_like(self.xi)
        self.rows = 1

    @classmethod
    def build(cls, bs: BoundaryState, tc: TimeChange, p: ParamSet, **kwargs) -> "PriceTable":
        table = cls(bs, tc, p, **kwargs)
        for i in range(1, len(bs)):
            table._fill_row(i)
        return table

    def _fill_row(self, i: int) -> None:
        assert i == self.rows
        tau = float(self.bs.tau_nodes[i])
        frame = _frame(self.bs, self.tc, self.params, tau)
        fine = frame.x_B + np.linspace(0.0, self.span, (self.xi_points - 1) * REFINEMENT + 1)
        theta = _theta(self.bs, self.params, frame, fine, self)
        prices = _price_from_theta(self.params, frame, fine, theta)
        self.values[i] = prices[::REFINEMENT]
        self.rows += 1
        logger.debug("tabulated prices at node %d (τ=%.6g)", i, tau)

    def jump_nodes(self, tau: float):
        """
        Past nodes for the jump source at τ, with their time weights
        a_j(s)/h(s)·w(s). The s = τ end is left out.
        """
        grid = _past_grid(self.bs, tau)
        weights = _trapezoid_weights(grid)[:-1]
        count = len(grid) - 1
        if count > self.rows:
            raise StateError(f"price rows up to node {count - 1} are needed; have {self.rows}")
        bs = self.bs
        scale = weights * bs.a_j_at[:count] / bs.h_at[:count]
        return count, scale


def _past_jump_term(bs: BoundaryState, frame: _Frame, x: np.ndarray, table: PriceTable):
    """
    ∫_0^{τ⁻} a_j(s)/h(s) ∫ P(s, ξ) 𝒦₁(τ, x, s, ξ) dξ ds.
    """
    count, scale = table.jump_nodes(frame.tau)
    total = np.zeros_like(x)
    for j in range(count):
        if scale[j] == 0.0:
            continue
        row = table.values[j] * table.xi_weights
        if not np.any(row):
            continue
        kernel = k1_kernel(
            x[None, :],
            table.xi[j][:, None],
            frame.x_B,
            frame.y,
            frame.F,
            float(bs.f_at[j]),
            frame.phi,
            frame.tau - float(bs.tau_nodes[j]),
        )
        total += scale[j] * (row @ kernel)
    return total


def _green_eta_integral(bs: BoundaryState, p: ParamSet, frame: _Frame, x: np.ndarray):
    """
    ∫_{x_B}^{x} e^{φη} G(τ, η + F) dη in closed form in η, by Gauss–Legendre
    in v = √(τ - s) over each sub-interval of the past grid.
    """
    tau = frame.tau
    I1, _, _ = i_integrals_arrays(x, frame.x_B, frame.y, frame.F, frame.phi, tau, p.k)
    total = -p.S_star * math.exp(p.k - frame.F) / (4.0 * SQRT_PI * math.sqrt(tau)) * I1

    n = bs.n_committed
    taus = bs.tau_nodes[:n]
    y_nodes = bs.y[:n]
    g_nodes = bs.g[:n]
    density = bs.psi_values()[:n] + bs.yprime()[:n] * g_nodes

    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_ORDER)
    grid = _past_grid(bs, tau)
    for a, b in zip(grid[:-1], grid[1:]):
        v_lo, v_hi = math.sqrt(tau - b), math.sqrt(tau - a)
        v = 0.5 * (v_hi - v_lo) * nodes + 0.5 * (v_hi + v_lo)
        w = 0.5 * (v_hi - v_lo) * weights
        omega = v * v
        s = tau - omega
        y_s = np.interp(s, taus, y_nodes)[:, None]
        g_s = np.interp(s, taus, g_nodes)[:, None]
        m_s = np.interp(s, taus, density)[:, None]
        _, I2, I3 = i_integrals_arrays(
            x[None, :],
            frame.x_B,
            frame.y,
            frame.F,
            frame.phi,
            tau,
            p.k,
            y_s,
            omega[:, None],
        )
        v_col = v[:, None]
        integrand = g_s * I3 / (4.0 * SQRT_PI * omega[:, None] * v_col) - m_s * I2 / (
            2.0 * SQRT_PI * v_col
        )
        total = total + ((2.0 * w * v)[:, None] * integrand).sum(axis=0)
    return total


def _theta(
    bs: BoundaryState, p: ParamSet, frame: _Frame, x: np.ndarray, table: Optional[PriceTable]
) -> np.ndarray:
    base = p.S_star * (math.exp(p.k) - math.exp(frame.x_B)) * math.exp(frame.phi * frame.x_B)
    if frame.tau <= 0.0:
        return np.full_like(x, base)
    theta = base + frame.h * _green_eta_integral(bs, p, frame, x)
    if table is not None:
        theta = theta + frame.h * _past_jump_term(bs, frame, x, table)
    return theta


def theta_source(
    bs: BoundaryState,
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    x,
    table: Optional[PriceTable] = None,
):
    """
    Θ(τ, x): the boundary term, the η-integral of h·G and the jump source
    from times before τ. The s = τ jump contribution is not included; the
    pricing ODE absorbs it.

    Without a table the jump source is left out.
    """
    frame = _frame(bs, tc, p, tau)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < frame.x_B):
        raise DomainError(f"x below the boundary x_B={frame.x_B}")
    out = _theta(bs, p, frame, xs, table)
    return out if np.ndim(x) else float(out[0])


def _price_from_theta(p: ParamSet, frame: _Frame, grid: np.ndarray, theta: np.ndarray):
    """
    Solve the pricing ODE on a uniform grid starting at x_B, with the
    running η-integral by cumulative Simpson.
    """
    a, phi, x_B = frame.a_j, frame.phi, frame.x_B
    P_B = p.S_star * (math.exp(p.k) - math.exp(x_B))
    shifted = grid - x_B
    running = integrate.cumulative_simpson(np.exp(a * shifted) * theta, x=grid, initial=0.0)
    return (
        P_B * np.exp(-(a + phi) * shifted)
        + np.exp(-phi * grid) * theta
        - np.exp(-(a + phi) * shifted - phi * x_B) * theta[0]
        - a * np.exp(-(a + phi) * shifted - phi * x_B) * running
    )


def intrinsic(p: ParamSet, x) -> np.ndarray:
    return np.maximum(p.K - p.S_star * np.exp(x), 0.0)


def price_at(
    bs: BoundaryState,
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    x: float,
    table: Optional[PriceTable] = None,
) -> float:
    """
    The Put price at (τ, x). At or below the boundary this is the
    intrinsic value K - S.

    The η-integral of Θ is done by Simpson's rule, doubling the points
    until the price moves by less than 1e-9 relative.
    """
    if tau <= 0.0:
        return float(intrinsic(p, x))
    frame = _frame(bs, tc, p, tau)
    if x <= frame.x_B:
        return float(p.K - p.S_star * math.exp(x))
    if table is None:
        table = PriceTable.build(bs, tc, p)

    count = SIMPSON_START
    previous = math.nan
    while True:
        grid = np.linspace(frame.x_B, x, count)
        theta = _theta(bs, p, frame, grid, table)
        price = _price_at_end(p, frame, grid, theta)
        if abs(price - previous) <= SIMPSON_RTOL * max(abs(price), 1e-300):
            return price
        if count >= SIMPSON_MAX_POINTS:
            logger.warning("Simpson rule stopped at %d points for x=%g", count, x)
            return price
        previous = price
        count = 2 * count - 1


def _price_at_end(p: ParamSet, frame: _Frame, grid: np.ndarray, theta: np.ndarray) -> float:
    a, phi, x_B = frame.a_j, frame.phi, frame.x_B
    x = float(grid[-1])
    P_B = p.S_star * (math.exp(p.k) - math.exp(x_B))
    weighted = integrate.simpson(np.exp(a * (grid - x_B)) * theta, x=grid)
    decay = math.exp(-(a + phi) * (x - x_B) - phi * x_B)
    return float(
        P_B * math.exp(-(a + phi) * (x - x_B))
        + math.exp(-phi * x) * theta[-1]
        - decay * theta[0]
        - a * decay * weighted
    )


def _past_jump_density(bs: BoundaryState, frame: _Frame, z: np.ndarray, table: PriceTable):
    """
    J(τ⁻, z) = ∫_0^{τ⁻} a_j(s)/h(s) ∫ P(s, ξ) 𝒢(ξ, s, z, τ) dξ ds.
    """
    count, scale = table.jump_nodes(frame.tau)
    total = np.zeros_like(z)
    for j in range(count):
        omega = frame.tau - float(bs.tau_nodes[j])
        source = table.xi[j][:, None] + float(bs.f_at[j])
        image = 2.0 * frame.y - source
        kernel = (
            np.exp(-((z[None, :] - source) ** 2) / (4.0 * omega))
            - np.exp(-((z[None, :] - image) ** 2) / (4.0 * omega))
        ) / (2.0 * SQRT_PI * math.sqrt(omega))
        total += scale[j] * ((table.values[j] * table.xi_weights) @ kernel)
    return total


def ode_residuals(
    bs: BoundaryState,
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    x_grid,
    table: Optional[PriceTable] = None,
) -> np.ndarray:
    """
    |φP + P_x - h(G + J(τ⁻)) + a_j P| / (1 + |h(G + J(τ⁻)) - a_j P|) at each x.
    """
    frame = _frame(bs, tc, p, tau)
    xs = np.asarray(x_grid, dtype=float)
    if np.any(xs - 2.0 * DIFFERENCE_STEP <= frame.x_B):
        raise DomainError("x grid must lie strictly inside the continuation region")
    if table is None:
        table = PriceTable.build(bs, tc, p)

    step = DIFFERENCE_STEP
    residuals = np.empty(len(xs))
    jumps = _past_jump_density(bs, frame, xs + frame.F, table)
    for n, x in enumerate(xs):
        stencil = [price_at(bs, tc, p, tau, x + o * step, table) for o in (-2, -1, 0, 1, 2)]
        P = stencil[2]
        P_x = (stencil[0] - 8.0 * stencil[1] + 8.0 * stencil[3] - stencil[4]) / (12.0 * step)
        G = G_interior(bs, tc, p, tau, x + frame.F)
        rhs = frame.h * (G + jumps[n]) - frame.a_j * P
        residuals[n] = abs(frame.phi * P + P_x - rhs) / (1.0 + abs(rhs))
    return residuals


def verify_ode_residual(
    bs: BoundaryState,
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    x_grid,
    table: Optional[PriceTable] = None,
) -> float:
    """
    Largest relative residual of the pricing ODE over x_grid.
    """
    if len(x_grid) < 5:
        raise ValueError(f"need at least 5 grid points, got {len(x_grid)}")
    return float(np.max(ode_residuals(bs, tc, p, tau, x_grid, table)))


class PriceQuery(NamedTuple):
    t: Time
    S_points: Sequence[float]


class PriceDiagnostics(NamedTuple):
    ode_residual: float
    residuals: np.ndarray
    exercised: np.ndarray


class PriceResult(NamedTuple):
    prices: np.ndarray
    boundary_value: float
    diagnostics: PriceDiagnostics


def price_query(table: PriceTable, query: PriceQuery, check_ode: bool = True) -> PriceResult:
    """
    Prices at every spot of the query, with the ODE residual at each spot
    in the continuation region (0 where the Put is exercised).
    """
    bs, tc, p = table.bs, table.tc, table.params
    t = p.check_time(query.t)
    tau = float(tc.tau(t))
    spots = np.asarray(query.S_points, dtype=float)
    if np.any(spots <= 0):
        raise ValueError("spot prices must be positive")
    xs = np.log(spots / p.S_star)
    frame = _frame(bs, tc, p, tau)
    boundary = p.S_star * math.exp(frame.x_B) if tau > 0 else p.K

    exercised = (xs <= frame.x_B) | (tau <= 0.0)
    prices = np.array([price_at(bs, tc, p, tau, x, table) for x in xs])
    residuals = np.zeros(len(xs))
    if check_ode:
        inside = [
            n
            for n, x in enumerate(xs)
            if not exercised[n] and x - 2 * DIFFERENCE_STEP > frame.x_B
        ]
        if inside:
            residuals[inside] = ode_residuals(bs, tc, p, tau, xs[inside], table)
    logger.info("priced %d spot(s) at t=%g, S_B=%.10g", len(xs), t, boundary)
    return PriceResult(
        prices=prices,
        boundary_value=boundary,
        diagnostics=PriceDiagnostics(float(residuals.max(initial=0.0)), residuals, exercised),
    )


def price_curve(table: PriceTable, t: float, spots: Sequence[float]) -> List[float]:
    return list(price_query(table, PriceQuery(Time(t), spots), check_ode=False).prices)

"""
The double-exponential (Kou) reduction.

With jump sizes drawn from p·θ₁e^{-θ₁y} upward and (1-p)·θ₂e^{θ₂y}
downward, the jump operator becomes local after the change of variable

    u = θ₁θ₂P + (θ₁ - θ₂)P_x - P_xx

so P is recovered from u by a second-order ODE with a closed-form
solution. The source term that couples past times is moved onto the
kernel by integrating by parts in ξ.
"""

import logging
import math
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate  # type: ignore

from .greens import BoundaryState, image_pair_derivative, k1_kernel
from .params import DomainError, ParamSet, TimeChange, coeffs_kou

logger = logging.getLogger(__name__)

# The upper tail of the decaying integral stops at x + TAIL_LENGTH/θ₁.
TAIL_LENGTH = 40.0
QUAD_RTOL = 1e-11
QUAD_ATOL = 1e-15


class KouOperatorCoeffs(NamedTuple):
    mu: float
    beta: float
    kappa: float
    theta1: float
    theta2: float

    @classmethod
    def at(cls, p: ParamSet, t: float) -> "KouOperatorCoeffs":
        if p.kou is None:
            raise ValueError("the parameter set has no Kou jump curves")
        mu, beta, kappa = coeffs_kou(p, t)
        return cls(mu, beta, kappa, float(p.kou.theta1(t)), float(p.kou.theta2(t)))

    def check(self) -> "KouOperatorCoeffs":
        if not self.theta1 > 1:
            raise ValueError(f"theta1 must exceed 1, got {self.theta1}")
        if not self.theta2 > 0:
            raise ValueError(f"theta2 must be positive, got {self.theta2}")
        return self


def u_from_P(coeffs: KouOperatorCoeffs, P, P_x, P_xx):
    return coeffs.theta1 * coeffs.theta2 * P + (coeffs.theta1 - coeffs.theta2) * P_x - P_xx


def solve_P_from_u_closed(
    coeffs: KouOperatorCoeffs,
    f: Callable[[float], float],
    x_B: float,
    P_at_boundary: float,
    x: float,
) -> float:
    """
    The solution of θ₁θ₂P + (θ₁ - θ₂)P_x - P_xx = f on [x_B, ∞) with
    P(x_B) = P_at_boundary and P → 0 at infinity:

        P(x) = e^{-θ₂(x-x_B)}[P_B + Q(x_B)] - Q(x) + R(x)

    where Q(x) = -1/(θ₁+θ₂) ∫_x^∞ e^{-θ₁(k-x)} f(k) dk and
    R(x) = 1/(θ₁+θ₂) ∫_{x_B}^x e^{-θ₂(x-k)} f(k) dk.
    """
    coeffs.check()
    if x < x_B:
        raise DomainError(f"x={x} is below the boundary {x_B}")
    theta1, theta2 = coeffs.theta1, coeffs.theta2
    scale = 1.0 / (theta1 + theta2)

    def upper(point: float) -> float:
        end = point + TAIL_LENGTH / theta1
        value, _error = integrate.quad(
            lambda k: math.exp(-theta1 * (k - point)) * f(k),
            point,
            end,
            epsrel=QUAD_RTOL,
            epsabs=QUAD_ATOL,
            limit=200,
        )
        tail = math.exp(-TAIL_LENGTH) * abs(f(end)) / theta1
        if not (math.isfinite(value) and math.isfinite(tail)) or tail > 1e-9 * max(1.0, abs(value)):
            raise ValueError(
                f"the source does not decay fast enough past x={end:g} for the θ₁={theta1} tail"
            )
        return -scale * value

    if x == x_B:
        return float(P_at_boundary)
    lower, _error = integrate.quad(
        lambda k: math.exp(-theta2 * (x - k)) * f(k),
        x_B,
        x,
        epsrel=QUAD_RTOL,
        epsabs=QUAD_ATOL,
        limit=200,
    )
    return float(
        math.exp(-theta2 * (x - x_B)) * (P_at_boundary + upper(x_B)) - upper(x) + scale * lower
    )


def dxi_K1_closed(
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    x: float,
    s: float,
    xi: float,
    x_B_tau: float,
    y_tau: float,
) -> float:
    """
    ∂𝒦₁/∂ξ in closed form: the derivative of the image pair of erf terms,
    which leaves φ times their sum minus the Gaussians at the η-limits.
    """
    if s >= tau:
        raise ValueError("s must be before τ")
    if x < x_B_tau:
        raise DomainError(f"x={x} is below the boundary {x_B_tau}")
    t, F, _h = tc.at_tau(tau)
    phi = float(p.phi(t))
    omega = tau - s
    f_s = tc.f(tc.t_of_tau(s))
    value = image_pair_derivative(xi + f_s, x, x_B_tau, F, phi, omega, y_tau)
    return float(value / (2.0 * math.sqrt(math.pi * omega)))


def dxi_k1_kernel(x, xi, x_B, y, F, f_s, phi, omega) -> np.ndarray:
    """
    Vectorized dxi_K1_closed without the argument checks.
    """
    value = image_pair_derivative(xi + f_s, x, x_B, F, phi, omega, y)
    return value / (2.0 * np.sqrt(np.pi * omega))


class XiTabulation(NamedTuple):
    """
    P(s_j, ξ) on a ξ-grid for each node j, with trapezoid weights in ξ.
    """

    xi: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_function(
        cls,
        bs: BoundaryState,
        P: Callable[[float, np.ndarray], np.ndarray],
        span: float,
        points: int,
    ) -> "XiTabulation":
        offsets = np.linspace(0.0, span, points)
        weights = np.full(points, offsets[1] - offsets[0])
        weights[[0, -1]] *= 0.5
        xi = bs.x_B[: bs.n_committed, None] + offsets[None, :]
        values = np.array([P(float(s), row) for s, row in zip(bs.tau_nodes, xi)])
        return cls(xi, values, weights)


def kou_source_assembly(
    bs: BoundaryState,
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    x: float,
    tabulation: XiTabulation,
) -> float:
    """
    ∫_0^τ (1/h(s)) ∫ [κ𝒦₁ - β ∂_ξ𝒦₁] P dξ ds - boundary term.

    The boundary term -β P(s, x_B(s)) 𝒦₁(τ, x, s, x_B(s)) comes from the
    integration by parts at the lower ξ-limit. With β = 0 this is the
    exponential model's jump source with a_j replaced by κ.
    """
    if p.kou is None:
        raise ValueError("the parameter set has no Kou jump curves")
    t, F, _h = tc.at_tau(tau)
    phi = float(p.phi(t))
    x_B = float(bs.xB_at(tau))
    y = float(bs.y_at(tau))
    if x < x_B:
        raise DomainError(f"x={x} is below the boundary {x_B}")

    n = bs.n_committed
    past = bs.tau_nodes[:n][bs.tau_nodes[:n] < tau]
    grid = np.append(past, tau)
    steps = np.diff(grid)
    weights = np.zeros(len(grid))
    weights[:-1] += 0.5 * steps
    weights[1:] += 0.5 * steps

    total = 0.0
    for j in range(len(past)):
        beta, kappa = _kou_at(p, float(bs.t_nodes[j]))
        if beta == 0.0 and kappa == 0.0:
            continue
        omega = tau - float(bs.tau_nodes[j])
        f_s = float(bs.f_at[j])
        xi = tabulation.xi[j]
        kernel = k1_kernel(x, xi, x_B, y, F, f_s, phi, omega)
        slope = dxi_k1_kernel(x, xi, x_B, y, F, f_s, phi, omega)
        body = np.sum(tabulation.weights * (kappa * kernel - beta * slope) * tabulation.values[j])
        edge = -beta * tabulation.values[j][0] * kernel[0]
        total += weights[j] / float(bs.h_at[j]) * (body + edge)
    return float(total)


def _kou_at(p: ParamSet, t: float):
    coeffs = coeffs_kou(p, t)
    return coeffs.beta, coeffs.kappa

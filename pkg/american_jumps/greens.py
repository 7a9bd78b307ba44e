"""
Heat-potential representation of u = φP + P_x in the continuation region.

After the time change the reduced problem is a heat equation on z > y(τ)
with a moving boundary y(τ) = x_B(τ) + f(τ). Its solution is written with
the image Green's function

    𝒢(ξ, s, z, τ) = [e^{-(z-ξ)²/4ω} - e^{-(z-2y(τ)+ξ)²/4ω}] / (2√(πω)),  ω = τ - s

and two densities living on the boundary: g (the Dirichlet data) and
Ψ (the boundary gradient). This module owns the per-node boundary record,
those densities, and every closed-form η-integral of the kernels that the
pricer needs.
"""

import logging
import math
from enum import Enum
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate, special  # type: ignore

from .params import DomainError, ParamSet, TimeChange, build_time_change, coeffs_exponential
from .typedefs import BackwardTime, NodeIndex

logger = logging.getLogger(__name__)

# Past this, exp() overflows and the log-scale split is used.
MAX_EXPONENT = 700.0
# Slack when matching a backward time to the solved range.
TAU_SLACK = 1e-12
SQRT_PI = math.sqrt(math.pi)
# Gauss–Legendre order per sub-interval of the boundary-limit s-integrals.
LAYER_GAUSS_ORDER = 24


class StateError(RuntimeError):
    """
    Raised when a boundary quantity is requested for a node that has not
    been solved yet.
    """


class KernelEval(NamedTuple):
    """
    A kernel value stored as value · exp(log_scale).

    log_scale is 0 unless the magnitude would overflow a double.
    """

    value: float
    log_scale: float = 0.0

    @property
    def real(self) -> float:
        if self.log_scale == 0.0:
            return self.value
        with np.errstate(over="ignore"):
            return float(self.value * np.exp(self.log_scale))

    @classmethod
    def from_log(cls, sign: float, log_abs: float) -> "KernelEval":
        if sign == 0.0 or log_abs == -math.inf:
            return cls(0.0)
        if log_abs > MAX_EXPONENT:
            return cls(float(sign), float(log_abs))
        return cls(float(sign * math.exp(log_abs)))


class BoundaryState:
    """
    Per-node record of the free boundary, built node by node in τ.

    Node i holds x_B, y = x_B + f, the boundary Gamma P_xx (limit from the
    continuation side) and the boundary datum g. Everything the kernels
    need at a node (t, f, h, φ, a_j) is precomputed once from the grid.

    Nodes 0..n_committed-1 are final. At most one further node may be
    staged with trial values while it is being solved.
    """

    def __init__(self, params: ParamSet, time_change: TimeChange, tau_nodes) -> None:
        tau_nodes = np.asarray(tau_nodes, dtype=float)
        if tau_nodes.ndim != 1 or len(tau_nodes) < 1 or tau_nodes[0] != 0.0:
            raise ValueError("tau nodes must be a 1-D array starting at 0")
        if np.any(np.diff(tau_nodes) <= 0):
            raise ValueError("tau nodes must be strictly increasing")
        if tau_nodes[-1] > time_change.tau_max + TAU_SLACK:
            raise DomainError(f"last node τ={tau_nodes[-1]} is past τ(0)={time_change.tau_max}")

        self.params = params
        self.time_change = time_change
        self.tau_nodes = tau_nodes

        n = len(tau_nodes)
        self.t_nodes = np.array([time_change.t_of_tau(tau) for tau in tau_nodes])
        self.f_at = np.array([time_change.f(t) for t in self.t_nodes])
        self.h_at = np.array([time_change.h(t) for t in self.t_nodes])
        self.phi_at = np.array([params.phi(t) for t in self.t_nodes])
        self.a_j_at = np.array([coeffs_exponential(params, t).a_j for t in self.t_nodes])

        self.x_B = np.full(n, np.nan)
        self.y = np.full(n, np.nan)
        self.Pxx = np.full(n, np.nan)
        self.g = np.full(n, np.nan)
        self.n_committed = 0
        self.staged = None  # type: Optional[int]

    def __len__(self) -> int:
        return len(self.tau_nodes)

    @property
    def n_valid(self) -> int:
        """
        Committed nodes plus the staged one, if any.
        """
        return self.n_committed + (1 if self.staged is not None else 0)

    @property
    def is_solved(self) -> bool:
        return self.n_committed == len(self)

    @property
    def tau_max(self) -> BackwardTime:
        """
        Largest backward time covered by valid nodes.
        """
        if self.n_valid == 0:
            raise StateError("no node has been solved")
        return BackwardTime(self.tau_nodes[self.n_valid - 1])

    def stage(self, i: int, x_B: float, Pxx: float = math.nan) -> None:
        """
        Write trial values for node i, the next node to be committed.
        """
        if i != self.n_committed:
            raise StateError(f"node {i} cannot be staged; next node is {self.n_committed}")
        self.staged = i
        self.x_B[i] = x_B
        self.y[i] = x_B + self.f_at[i]
        self.g[i] = boundary_datum(
            self.params, self.h_at[i], self.phi_at[i], x_B, initial=(i == 0)
        )
        self.Pxx[i] = Pxx

    def commit(self, i: int) -> None:
        if self.staged != i:
            raise StateError(f"node {i} was not staged")
        if not math.isfinite(self.Pxx[i]):
            raise StateError(f"node {i} has no Gamma value")
        self.staged = None
        self.n_committed += 1

    def require(self, i: int) -> None:
        if not 0 <= i < self.n_valid:
            raise StateError(f"node {i} is not available; {self.n_valid} node(s) solved")

    def copy(self) -> "BoundaryState":
        clone = object.__new__(BoundaryState)
        clone.__dict__.update(self.__dict__)
        for name in ("x_B", "y", "Pxx", "g"):
            setattr(clone, name, getattr(self, name).copy())
        return clone

    @classmethod
    def synthetic(
        cls, params: ParamSet, time_change: TimeChange, tau_nodes, x_B, Pxx
    ) -> "BoundaryState":
        """
        A fully committed state with prescribed boundary and Gamma values.
        """
        bs = cls(params, time_change, tau_nodes)
        for i, (xb, gamma) in enumerate(zip(x_B, Pxx)):
            bs.stage(i, float(xb), float(gamma))
            bs.commit(i)
        return bs

    # Arrays over the valid nodes.

    @property
    def S_B(self) -> np.ndarray:
        n = self.n_committed
        return self.params.S_star * np.exp(self.x_B[:n])

    def yprime(self) -> np.ndarray:
        """
        dy/dτ at the valid nodes, differenced over nodes 1.. only: the
        boundary jumps away from the strike at τ = 0⁺, and a difference
        across that jump is not a slope. Node 0 takes node 1's value; with
        fewer than three valid nodes every slope is zero.
        """
        n = self.n_valid
        if n < 3:
            return np.zeros(n)
        slopes = np.empty(n)
        slopes[1:] = np.gradient(self.y[1:n], self.tau_nodes[1:n], edge_order=1)
        slopes[0] = slopes[1]
        return slopes

    def psi_values(self) -> np.ndarray:
        n = self.n_valid
        S_star = self.params.S_star
        return (self.Pxx[:n] - S_star * self.phi_at[:n] * np.exp(self.x_B[:n])) / self.h_at[:n]

    # Piecewise-linear interpolants in τ.

    def _check_tau(self, tau) -> None:
        if np.any(np.asarray(tau) < -TAU_SLACK) or np.any(
            np.asarray(tau) > self.tau_max + TAU_SLACK
        ):
            raise DomainError(f"τ={tau} is outside the solved range [0, {self.tau_max}]")

    def _interp(self, tau, values):
        self._check_tau(tau)
        n = self.n_valid
        out = np.interp(tau, self.tau_nodes[:n], values[:n])
        return out if np.ndim(out) else float(out)

    def xB_at(self, tau):
        return self._interp(tau, self.x_B)

    def y_at(self, tau):
        return self._interp(tau, self.y)

    def psi_at(self, tau):
        return self._interp(tau, self.psi_values())

    def yprime_at(self, tau):
        return self._interp(tau, self.yprime())

    def __repr__(self) -> str:
        return (
            f"BoundaryState(nodes={len(self)}, committed={self.n_committed}, "
            f"staged={self.staged})"
        )


def boundary_datum(p: ParamSet, h: float, phi: float, x_B: float, initial: bool) -> float:
    """
    g = S_*/h {φ e^k - [γ + φ] e^{x_B}}, where γ is ½ at expiry only.
    """
    gamma = 0.5 if initial else 0.0
    return p.S_star / h * (phi * math.exp(p.k) - (gamma + phi) * math.exp(x_B))


def g_boundary(bs: BoundaryState, tc: TimeChange, p: ParamSet, tau: float) -> float:
    """
    The Dirichlet datum of the heat problem at backward time τ.
    """
    bs._check_tau(tau)
    if tau <= 0.0:
        return boundary_datum(p, tc.h(p.T), float(p.phi(p.T)), bs.x_B[0], initial=True)
    t, _f, h = tc.at_tau(tau)
    return boundary_datum(p, h, float(p.phi(t)), bs.xB_at(tau), initial=False)


def psi(bs: BoundaryState, tc: TimeChange, p: ParamSet, i: NodeIndex) -> float:
    """
    Ψ(τ_i) = (P_xx - S_* φ e^{x_B}) / h.
    """
    bs.require(i)
    if not math.isfinite(bs.Pxx[i]):
        raise StateError(f"node {i} has no Gamma value yet")
    return float((bs.Pxx[i] - p.S_star * bs.phi_at[i] * math.exp(bs.x_B[i])) / bs.h_at[i])


# Closed-form η-integrals.
#
# Everything below is built on
#
#     S(c) = ∫_{x_B}^{x} e^{φη} e^{-(η+F-c)²/4ω} dη
#          = √(πω) e^{φ(c-F)+ωφ²} [erf((x+F-c-2ωφ)/2√ω) - erf((x_B+F-c-2ωφ)/2√ω)]
#
# with F = f(τ). Values are carried as (sign, log|value|) pairs so the
# e^{ωφ²} growth never overflows.


def log_erf_diff(upper, lower) -> Tuple[np.ndarray, np.ndarray]:
    """
    sign and log-magnitude of erf(upper) - erf(lower), accurate in the
    tails where both erf values round to ±1.
    """
    upper, lower = np.broadcast_arrays(np.asarray(upper, float), np.asarray(lower, float))
    flip = upper < lower
    hi = np.where(flip, lower, upper)
    lo = np.where(flip, upper, lower)
    # Reflect so the tail case always has lo >= 0.
    negative = hi <= 0
    hi, lo = np.where(negative, -lo, hi), np.where(negative, -hi, lo)

    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        tail = lo >= 0
        lo_t = np.where(tail, lo, 0.0)
        hi_t = np.where(tail, hi, 0.0)
        scaled = special.erfcx(lo_t) - special.erfcx(hi_t) * np.exp(lo_t * lo_t - hi_t * hi_t)
        log_tail = -lo_t * lo_t + np.log(scaled)
        log_body = np.log(special.erf(hi) - special.erf(lo))
        log_abs = np.where(tail, log_tail, log_body)

    sign = np.where(flip, -1.0, 1.0)
    zero = ~np.isfinite(log_abs) | (hi == lo)
    sign = np.where(zero, 0.0, sign)
    log_abs = np.where(zero, -np.inf, log_abs)
    return sign, log_abs


def _signed_add(s1, l1, s2, l2) -> Tuple[np.ndarray, np.ndarray]:
    s1, l1, s2, l2 = np.broadcast_arrays(s1, l1, s2, l2)
    with np.errstate(invalid="ignore", over="ignore", under="ignore", divide="ignore"):
        m = np.maximum(np.where(s1 == 0, -np.inf, l1), np.where(s2 == 0, -np.inf, l2))
        shift = np.where(np.isfinite(m), m, 0.0)
        total = np.where(s1 == 0, 0.0, s1 * np.exp(l1 - shift)) + np.where(
            s2 == 0, 0.0, s2 * np.exp(l2 - shift)
        )
        log_abs = np.log(np.abs(total)) + shift
    sign = np.sign(total)
    return sign, np.where(sign == 0, -np.inf, log_abs)


def _from_log(sign, log_abs) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        return np.where(sign == 0, 0.0, sign * np.exp(log_abs))


def _log_S(c, x, x_B, F, phi, omega) -> Tuple[np.ndarray, np.ndarray]:
    root = 2.0 * np.sqrt(omega)
    shift = F - c - 2.0 * omega * phi
    sign, log_diff = log_erf_diff((x + shift) / root, (x_B + shift) / root)
    exponent = phi * (c - F) + omega * phi * phi + 0.5 * np.log(np.pi * omega)
    return sign, exponent + log_diff


def log_image_pair(c, x, x_B, F, phi, omega, y) -> Tuple[np.ndarray, np.ndarray]:
    """
    S(c) - S(2y - c): the η-integral of e^{φη} against a source at c and
    its image across y.
    """
    s1, l1 = _log_S(c, x, x_B, F, phi, omega)
    s2, l2 = _log_S(2.0 * y - c, x, x_B, F, phi, omega)
    return _signed_add(s1, l1, -s2, l2)


def log_image_sum(c, x, x_B, F, phi, omega, y) -> Tuple[np.ndarray, np.ndarray]:
    s1, l1 = _log_S(c, x, x_B, F, phi, omega)
    s2, l2 = _log_S(2.0 * y - c, x, x_B, F, phi, omega)
    return _signed_add(s1, l1, s2, l2)


def image_gauss_edges(c, x, x_B, F, phi, omega, y) -> np.ndarray:
    """
    [e^{φη}(e^{-(η+F-c)²/4ω} + e^{-(η+F-2y+c)²/4ω})] from η = x_B to x.
    """

    def edge(eta):
        u1 = eta + F - c
        u2 = eta + F - 2.0 * y + c
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(phi * eta - u1 * u1 / (4.0 * omega)) + np.exp(
                phi * eta - u2 * u2 / (4.0 * omega)
            )

    return edge(x) - edge(x_B)


def image_pair_derivative(c, x, x_B, F, phi, omega, y) -> np.ndarray:
    """
    d/dc [S(c) - S(2y - c)] = φ[S(c) + S(2y - c)] - image_gauss_edges.
    """
    sign, log_abs = log_image_sum(c, x, x_B, F, phi, omega, y)
    return phi * _from_log(sign, log_abs) - image_gauss_edges(c, x, x_B, F, phi, omega, y)


def k1_kernel(x, xi, x_B, y, F, f_s, phi, omega) -> np.ndarray:
    """
    Vectorized 𝒦₁ = ∫_{x_B}^{x} e^{φη} 𝒢(ξ + f(s), s, η + F, τ) dη for ω = τ - s > 0.
    """
    sign, log_abs = log_image_pair(xi + f_s, x, x_B, F, phi, omega, y)
    return _from_log(sign, log_abs - np.log(2.0 * np.sqrt(np.pi * omega)))


def _node_frame(tc: TimeChange, p: ParamSet, tau: float) -> Tuple[float, float]:
    """
    (F, φ) at backward time τ.
    """
    t, F, _h = tc.at_tau(tau)
    return F, float(p.phi(t))


def K1_closed(
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    x: float,
    s: float,
    xi: float,
    x_B_tau: float,
    y_tau: float,
) -> KernelEval:
    """
    Closed form of 𝒦₁(τ, x, s, ξ), the η-integral of the image Green's
    function weighted by e^{φ(τ)η}. ξ is a log-price at time s.
    """
    if s >= tau:
        raise ValueError("s must be before τ; use K1_at_s_equals_tau for s = τ")
    if x < x_B_tau:
        raise DomainError(f"x={x} is below the boundary {x_B_tau}")
    F, phi = _node_frame(tc, p, tau)
    f_s = tc.f(tc.t_of_tau(s))
    omega = tau - s
    sign, log_abs = log_image_pair(xi + f_s, x, x_B_tau, F, phi, omega, y_tau)
    log_abs = log_abs - math.log(2.0 * math.sqrt(math.pi * omega))
    return KernelEval.from_log(float(sign), float(log_abs))


def K1_at_s_equals_tau(
    p: ParamSet,
    tau: float,
    x: float,
    xi: float,
    x_B_tau: float,
    tc: Optional[TimeChange] = None,
) -> float:
    """
    At s = τ the Green's function is a point mass at ξ (its image lies
    below the boundary), so 𝒦₁ is a step in x.
    """
    if xi < x_B_tau:
        raise DomainError(f"ξ={xi} is below the boundary {x_B_tau}")
    if x < xi:
        return 0.0
    if tau <= 0.0:
        t = p.T
    else:
        t = (tc if tc is not None else build_time_change(p)).t_of_tau(tau)
    weight = math.exp(float(p.phi(t)) * xi)
    return 0.5 * weight if x == xi else weight


def k1_step(phi: float, x, xi) -> np.ndarray:
    """
    Vectorized K1_at_s_equals_tau without the argument checks.
    """
    x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
    weight = np.exp(phi * xi)
    return np.where(x > xi, weight, np.where(x == xi, 0.5 * weight, 0.0))


class IIntegrals(NamedTuple):
    I1: float
    I2: float
    I3: float


def i_integrals_arrays(x, x_B, y, F, phi, tau, k, y_s=None, omega=None):
    """
    Vectorized I1, I2, I3. I2 and I3 are only defined when a past time s
    is given (through y_s = y(s) and ω = τ - s).
    """
    I1 = _from_log(*log_image_pair(k, x, x_B, F, phi, tau, y))
    if y_s is None:
        return I1, None, None
    I2 = _from_log(*log_image_pair(y_s, x, x_B, F, phi, omega, y))
    I3 = 2.0 * omega * image_pair_derivative(y_s, x, x_B, F, phi, omega, y)
    return I1, I2, I3


def I_integrals(
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    x: float,
    s: Optional[float],
    bs: BoundaryState,
) -> IIntegrals:
    """
    η-integrals of e^{φη} against the three kernels of G:

     - I1: the terminal point mass at k and its image
     - I2: the single layer at y(s) and its image
     - I3: the double layer, (z - c) e^{-(z-c)²/4ω} summed over the pair

    I2 and I3 are 0 when s is None.
    """
    if tau <= 0.0:
        raise DomainError("the η-integrals need τ > 0")
    x_B = bs.xB_at(tau)
    if x < x_B:
        raise DomainError(f"x={x} is below the boundary {x_B}")
    y = bs.y_at(tau)
    F, phi = _node_frame(tc, p, tau)
    if s is None:
        I1, _, _ = i_integrals_arrays(x, x_B, y, F, phi, tau, p.k)
        return IIntegrals(float(I1), 0.0, 0.0)
    if not 0.0 <= s < tau:
        raise DomainError(f"s={s} must lie in [0, τ)")
    I1, I2, I3 = i_integrals_arrays(x, x_B, y, F, phi, tau, p.k, bs.y_at(s), tau - s)
    return IIntegrals(float(I1), float(I2), float(I3))


def gamma_integral_closed(p: ParamSet, tc: TimeChange, tau: float, z: float, y_tau: float) -> float:
    """
    The terminal step term collapsed onto the heat kernel:

        -S_* e^{-f}/(2√(πτ)) ∫_{y(0)}^∞ [e^{-(ξ-z)²/4τ} - e^{-(ξ+z-2y)²/4τ}] dξ
    """
    if tau <= 0.0:
        raise DomainError("τ = 0: use the pointwise terminal value instead")
    F = tc.at_tau(tau)[1]
    root = 2.0 * math.sqrt(tau)
    y0 = p.k
    return float(
        0.5
        * p.S_star
        * math.exp(-F)
        * (special.erf((y0 - z) / root) - special.erf((y0 + z - 2.0 * y_tau) / root))
    )


def terminal_collapse(p: ParamSet, F: float, tau: float, z, y: float):
    """
    The terminal point mass -½S_* e^k propagated to (τ, z), with its image.
    """
    prefactor = -p.S_star * math.exp(p.k - F) / (4.0 * math.sqrt(math.pi * tau))
    return prefactor * (
        np.exp(-((p.k - z) ** 2) / (4.0 * tau)) - np.exp(-((p.k + z - 2.0 * y) ** 2) / (4.0 * tau))
    )


def terminal_gradient(p: ParamSet, F: float, tau: float, y: float) -> float:
    """
    lim_{z→y⁺} ∂_z of the terminal point mass and its image.
    """
    if tau <= 0.0:
        return 0.0
    return (
        p.S_star
        * math.exp(p.k - F)
        * (y - p.k)
        / (4.0 * SQRT_PI * tau**1.5)
        * math.exp(-((y - p.k) ** 2) / (4.0 * tau))
    )


# Green's function and its boundary limits.


def G_interior(bs: BoundaryState, tc: TimeChange, p: ParamSet, tau: float, z: float) -> float:
    """
    G(τ, z) for z strictly above the boundary, with the s-integrals done by
    adaptive quadrature in v = √(τ - s) over the piecewise-linear
    boundary interpolants.
    """
    if tau <= 0.0:
        # Terminal data vanishes in the continuation region.
        return 0.0
    y = bs.y_at(tau)
    if z <= y:
        raise DomainError(f"z={z} is not above the boundary y(τ)={y}")
    F = tc.at_tau(tau)[1]
    collapsed = float(terminal_collapse(p, F, tau, z, y))

    n = bs.n_valid
    taus = bs.tau_nodes[:n]
    y_nodes = bs.y[:n]
    g_nodes = bs.g[:n]
    density = bs.psi_values() + bs.yprime() * g_nodes

    def integrand(v: float) -> float:
        if v <= 0.0:
            return 0.0
        omega = v * v
        s = tau - omega
        y_s = np.interp(s, taus, y_nodes)
        g_s = np.interp(s, taus, g_nodes)
        m_s = np.interp(s, taus, density)
        d1 = z - y_s
        d2 = z - 2.0 * y + y_s
        e1 = math.exp(-d1 * d1 / (4.0 * omega))
        e2 = math.exp(-d2 * d2 / (4.0 * omega))
        single = -m_s / (2.0 * SQRT_PI * v) * (e1 - e2)
        double = g_s / (4.0 * SQRT_PI * omega * v) * (d1 * e1 + d2 * e2)
        return 2.0 * v * (single + double)

    top = math.sqrt(tau)
    points = [math.sqrt(tau - s) for s in taus if 0.0 < tau - s < tau]
    peak = 0.5 * (z - y)
    if 0.0 < peak < top:
        points.append(peak)
    value, _error = integrate.quad(
        integrand,
        0.0,
        top,
        points=sorted(set(points)) or None,
        limit=500,
        epsabs=1e-13,
        epsrel=1e-11,
    )
    return collapsed + float(value)


def G_at_boundary(bs: BoundaryState, tc: TimeChange, p: ParamSet, tau: float) -> float:
    """
    The limit of G as z approaches the boundary is the boundary datum.
    """
    return g_boundary(bs, tc, p, tau)


class Layer(Enum):
    """
    Boundary limits of the heat-layer kernels, as functions of
    Δ = y(τ) - y(s) and ω = τ - s (each over 2√π ω^{3/2}):

     - SINGLE: Δ e^{-Δ²/4ω}, weakly singular
     - DOUBLE: e^{-Δ²/4ω} (1 - Δ²/2ω), taken as a Hadamard finite part
     - PLAIN: e^{-Δ²/4ω}, taken as a Hadamard finite part
    """

    SINGLE = "single"
    DOUBLE = "double"
    PLAIN = "plain"


def layer_integral(
    layer: Layer,
    tau: float,
    y_tau: float,
    s_nodes,
    y_nodes,
    weights,
    end_weight: float,
) -> float:
    """
    ∫_0^τ w(s) K(s) ds for the boundary-limit kernel K of `layer`.

    w and y are the piecewise-linear interpolants through the past nodes
    and (τ, end_weight), (τ, y_tau). Every sub-interval is integrated by
    Gauss–Legendre in v = √(τ - s); after the τ-end value is subtracted
    from the finite-part kernels, the integrand in v is smooth on the last
    sub-interval too. The subtracted constant integrates to
    -end_weight/√(πτ).
    """
    s = np.append(np.asarray(s_nodes, float), tau)
    w = np.append(np.asarray(weights, float), end_weight)
    y = np.append(np.asarray(y_nodes, float), y_tau)
    if len(s) < 2:
        raise ValueError("the s-grid needs at least one past node")
    if np.any(np.diff(s) <= 0.0):
        raise DomainError("past nodes must increase and lie before τ")

    nodes, gauss_weights = np.polynomial.legendre.leggauss(LAYER_GAUSS_ORDER)
    total = 0.0
    for j in range(len(s) - 1):
        v_hi = math.sqrt(tau - s[j])
        v_lo = math.sqrt(tau - s[j + 1])
        v = 0.5 * (v_hi - v_lo) * nodes + 0.5 * (v_hi + v_lo)
        omega = v * v
        frac = (tau - omega - s[j]) / (s[j + 1] - s[j])
        w_v = w[j] + frac * (w[j + 1] - w[j])
        delta = y_tau - (y[j] + frac * (y[j + 1] - y[j]))
        gauss = np.exp(-delta * delta / (4.0 * omega))
        if layer is Layer.SINGLE:
            numerator = w_v * delta * gauss
        elif layer is Layer.DOUBLE:
            numerator = w_v * gauss * (1.0 - delta * delta / (2.0 * omega)) - end_weight
        else:
            numerator = w_v * gauss - end_weight
        # ds = 2v dv turns 1/(2√π ω^{3/2}) into 1/(√π v²).
        total += 0.5 * (v_hi - v_lo) * float(gauss_weights @ (numerator / (SQRT_PI * omega)))
    if layer is not Layer.SINGLE:
        total -= end_weight / (SQRT_PI * math.sqrt(tau))
    return total


def Gz_at_boundary(bs: BoundaryState, tc: TimeChange, p: ParamSet, i: NodeIndex) -> float:
    """
    lim_{z→y⁺} ∂G/∂z at node i: the terminal term, the single layer
    (weakly singular) and the double layer (finite part).
    """
    bs.require(i)
    if i == 0:
        return 0.0
    if not math.isfinite(bs.Pxx[i]):
        raise StateError(f"node {i} has no Gamma value yet")

    tau = float(bs.tau_nodes[i])
    y = float(bs.y[i])
    terminal = terminal_gradient(p, float(bs.f_at[i]), tau, y)

    s = bs.tau_nodes[:i]
    y_past = bs.y[:i]
    density = (bs.psi_values() + bs.yprime() * bs.g[: bs.n_valid])[: i + 1]
    single = layer_integral(Layer.SINGLE, tau, y, s, y_past, density[:i], float(density[i]))
    double = layer_integral(Layer.DOUBLE, tau, y, s, y_past, bs.g[:i], float(bs.g[i]))
    return terminal + single + double

"""
Exponential Legendre basis on [x_B, ∞).

E_n(x) = P_n(s) with s = 1 - 2e^{-(x-x_B)/L}, orthogonal under the weight
w(x) = (2/L) e^{-(x-x_B)/L}. Used as an alternative representation of the
price in x for cross-checking the closed-form pricer.

`solve_collocation` marches over a solved boundary and keeps the
coefficients of every node; the jump source at later nodes integrates
those stored expansions.
"""

import logging
import math
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from .greens import BoundaryState, StateError, boundary_datum, k1_kernel, k1_step
from .params import DomainError, ParamSet, TimeChange, coeffs_exponential
from .pricer import theta_source

logger = logging.getLogger(__name__)

PROJECTION_NODES = 64
# Gauss–Legendre order for ∫_{x_B}^{x} e^{φη} E_j(η) dη.
RUNNING_NODES = 48
MAX_CONDITION = 1e14
# Boundary residual, relative to S*(e^k + e^{x_B})φ/h, below which it counts as zero.
BALANCE_TOL = 1e-8


class CollocationError(RuntimeError):
    """
    Raised when the collocation system cannot be solved reliably.
    """


class ELBasis(NamedTuple):
    N: int = 12
    L: float = 10.0
    x_B_ref: float = 0.0

    def check(self) -> "ELBasis":
        if self.N < 1:
            raise ValueError(f"N must be at least 1, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        return self

    def to_s(self, x):
        return 1.0 - 2.0 * np.exp(-(np.asarray(x, dtype=float) - self.x_B_ref) / self.L)

    def to_x(self, s):
        return self.x_B_ref - self.L * np.log((1.0 - np.asarray(s, dtype=float)) / 2.0)

    def weight(self, x):
        return 2.0 / self.L * np.exp(-(np.asarray(x, dtype=float) - self.x_B_ref) / self.L)

    def anchored(self, x_B: float) -> "ELBasis":
        return self._replace(x_B_ref=x_B)


def basis_matrix(b: ELBasis, x) -> np.ndarray:
    """
    E_0..E_{N-1} at every x, by the three-term recurrence. Shape (N, len(x)).
    """
    s = b.to_s(np.atleast_1d(x))
    out = np.empty((b.N, len(s)))
    out[0] = 1.0
    if b.N > 1:
        out[1] = s
    for n in range(1, b.N - 1):
        out[n + 1] = ((2 * n + 1) * s * out[n] - n * out[n - 1]) / (n + 1)
    return out


def eval_basis(b: ELBasis, n: int, x):
    b.check()
    if not 0 <= n < b.N:
        raise ValueError(f"n={n} is outside [0, {b.N})")
    if np.any(np.asarray(x) < b.x_B_ref):
        raise ValueError(f"x must not be below x_B={b.x_B_ref}")
    values = basis_matrix(b, x)[n]
    return values if np.ndim(x) else float(values[0])


def project(b: ELBasis, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """
    α_j = (2j+1)/2 ∫ E_j f w dx, by Gauss–Legendre in s.
    """
    b.check()
    nodes, weights = np.polynomial.legendre.leggauss(PROJECTION_NODES)
    samples = np.asarray(f(b.to_x(nodes)), dtype=float)
    if not np.all(np.isfinite(samples)):
        raise ValueError("the function is not finite at every quadrature node")
    legendre = basis_matrix(b, b.to_x(nodes))
    scale = (2.0 * np.arange(b.N) + 1.0) / 2.0
    return scale * (legendre @ (weights * samples))


def reconstruct(b: ELBasis, alpha: np.ndarray, x) -> np.ndarray:
    return np.asarray(alpha) @ basis_matrix(b, x)


def collocation_points(b: ELBasis) -> np.ndarray:
    nodes, _weights = np.polynomial.legendre.leggauss(b.N)
    return b.to_x(nodes)


class Snapshot(NamedTuple):
    tau: float
    basis: ELBasis
    alpha: np.ndarray


class CoefficientHistory:
    """
    α(s) at every solved node, each against the basis anchored at x_B(s).

    Entry j belongs to boundary node j. Below its own anchor an entry is
    continued by the intrinsic value, which is what the exercise region
    holds.
    """

    def __init__(self, p: ParamSet) -> None:
        self.params = p
        self.snapshots = []  # type: List[Snapshot]

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, j: int) -> Snapshot:
        return self.snapshots[j]

    def append(self, tau: float, basis: ELBasis, alpha) -> None:
        if self.snapshots and not tau > self.snapshots[-1].tau:
            raise ValueError(f"τ={tau} does not follow τ={self.snapshots[-1].tau}")
        alpha = np.array(alpha, dtype=float)
        if alpha.shape != (basis.N,):
            raise ValueError(f"expected {basis.N} coefficients, got shape {alpha.shape}")
        self.snapshots.append(Snapshot(float(tau), basis, alpha))

    def price(self, j: int, x) -> np.ndarray:
        snap = self.snapshots[j]
        x = np.asarray(x, dtype=float)
        anchor = snap.basis.x_B_ref
        inside = reconstruct(snap.basis, snap.alpha, np.maximum(x, anchor))
        exercise = self.params.K - self.params.S_star * np.exp(x)
        return np.where(x >= anchor, inside, exercise)

    def reanchored(self, j: int, basis: ELBasis) -> np.ndarray:
        """
        Entry j's price re-projected onto `basis`. Exact when the anchor
        has not moved; otherwise limited by the kink at the old boundary.
        """
        return project(basis, lambda xs: self.price(j, xs))

    def past_term(
        self, bs: BoundaryState, tau: float, x: np.ndarray, frame: Tuple[float, float, float, float]
    ) -> np.ndarray:
        """
        ∫_0^{τ⁻} a_j(s)/h(s) ∫_{x_B(s)}^∞ P_N(s, ξ) 𝒦₁(τ, x, s, ξ) dξ ds.

        Trapezoid in s over the stored nodes, leaving out the s = τ end;
        Gauss–Legendre in the mapped variable of each entry's basis for ξ.
        """
        x_B, y, F, phi = frame
        taus = [snap.tau for snap in self.snapshots if snap.tau < tau]
        count = len(taus)
        if count == 0:
            return np.zeros_like(x)
        if count > bs.n_valid or not np.array_equal(taus, bs.tau_nodes[:count]):
            raise ValueError("the coefficient history does not follow the boundary nodes")
        grid = np.append(taus, tau)
        steps = np.diff(grid)
        weights = np.zeros(count)
        weights += 0.5 * steps
        weights[1:] += 0.5 * steps[:-1]
        scale = weights * bs.a_j_at[:count] / bs.h_at[:count]

        nodes, gl = np.polynomial.legendre.leggauss(PROJECTION_NODES)
        total = np.zeros_like(x)
        for j in range(count):
            snap = self.snapshots[j]
            if scale[j] == 0.0 or not np.any(snap.alpha):
                continue
            xi = snap.basis.to_x(nodes)
            row = gl * snap.basis.L / (1.0 - nodes) * reconstruct(snap.basis, snap.alpha, xi)
            kernel = k1_kernel(
                x[None, :],
                xi[:, None],
                x_B,
                y,
                F,
                float(bs.f_at[j]),
                phi,
                tau - snap.tau,
            )
            total += scale[j] * (row @ kernel)
        return total


class DiscretizedSystem(NamedTuple):
    """
    The boundary residual as a function of a trial x_B, and the linear
    system for the expansion coefficients at τ.
    """

    basis: ELBasis
    residual: Callable[[float], float]
    matrix: np.ndarray
    rhs: np.ndarray
    points: np.ndarray

    def solve(self) -> np.ndarray:
        condition = np.linalg.cond(self.matrix)
        if not math.isfinite(condition) or condition > MAX_CONDITION:
            raise CollocationError(f"collocation matrix is singular: cond={condition:.3e}")
        return np.linalg.solve(self.matrix, self.rhs)

    def price(self, alpha: np.ndarray, x) -> np.ndarray:
        return reconstruct(self.basis, alpha, x)


def assemble_discretized_system(
    b: ELBasis,
    bs: BoundaryState,
    tc: TimeChange,
    p: ParamSet,
    tau: float,
    theta: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    history: Optional[CoefficientHistory] = None,
) -> DiscretizedSystem:
    """
    At the collocation points x_c the expansion must satisfy

        Σ_j α_j [E_j(x_c) + a_j e^{-φx_c} ∫ 𝒦₁(τ, x_c, τ, ξ) E_j(ξ) dξ] = e^{-φx_c} Θ(x_c)

    where the s = τ kernel is the step K1_at_s_equals_tau. Θ defaults to
    the boundary term and the η-integral of h·G, plus, given a history,
    the jump source from the stored expansions at earlier nodes.
    """
    t, F, h = tc.at_tau(tau)
    phi = float(p.phi(t))
    a_j = coeffs_exponential(p, t).a_j
    x_B = float(bs.xB_at(tau))
    basis = b.check().anchored(x_B)

    if theta is None:
        frame = (x_B, float(bs.y_at(tau)), F, phi)

        def theta(xs):
            out = theta_source(bs, tc, p, tau, xs)
            if history is not None and tau > 0.0:
                out = out + h * history.past_term(bs, tau, xs, frame)
            return out

    points = collocation_points(basis)
    nodes, weights = np.polynomial.legendre.leggauss(RUNNING_NODES)
    matrix = basis_matrix(basis, points).T.copy()
    for row, x_c in enumerate(points):
        half = 0.5 * (x_c - x_B)
        xi = x_B + half * (nodes + 1.0)
        # Nodes sit strictly inside (x_B, x_c), where the step is e^{φξ}.
        kernel = k1_step(phi, x_c, xi)
        running = basis_matrix(basis, xi) @ (half * weights * kernel)
        matrix[row] += a_j * math.exp(-phi * x_c) * running
    rhs = np.exp(-phi * points) * np.asarray(theta(points), dtype=float)

    lam = float(p.lam(t))
    gamma = 0.5 if tau <= 0.0 else 0.0

    def residual(trial_x_B: float) -> float:
        """
        Boundary balance before the smooth-fit simplification. For τ > 0
        it is -λφS*(e^k - e^x)/h, whose only root is the strike.
        """
        g = boundary_datum(p, h, phi, trial_x_B, initial=tau <= 0.0)
        gap = math.exp(p.k) - math.exp(trial_x_B)
        return (
            p.S_star / h * (phi * gap - gamma * math.exp(trial_x_B))
            - g
            - lam * phi / h * p.S_star * gap
        )

    logger.debug("collocation system at τ=%.6g: N=%d, x_B=%.10g", tau, basis.N, x_B)
    return DiscretizedSystem(basis, residual, matrix, rhs, points)


class NodeBalance(NamedTuple):
    """
    How the expansion at one node sits against the solved boundary.

    balance is the boundary residual at the solver's x_B; value_gap is
    P_N(x_B) - (K - S_B).
    """

    node: int
    balance: float
    value_gap: float


class CollocationSolution(NamedTuple):
    bs: BoundaryState
    history: CoefficientHistory
    balances: List[NodeBalance]

    def price(self, tau: float, x) -> np.ndarray:
        """
        P_N(τ, x). Between nodes the two neighbouring expansions are
        re-projected onto the basis anchored at x_B(τ) and blended
        linearly in τ.
        """
        taus = np.array([snap.tau for snap in self.history])
        if not taus[0] <= tau <= taus[-1]:
            raise DomainError(f"τ={tau} is outside the solved range [{taus[0]}, {taus[-1]}]")
        hi = int(np.searchsorted(taus, tau))
        if taus[hi] == tau:
            return self.history.price(hi, x)
        lo = hi - 1
        basis = self.history[hi].basis.anchored(float(self.bs.xB_at(tau)))
        w = (tau - taus[lo]) / (taus[hi] - taus[lo])
        alpha = (1.0 - w) * self.history.reanchored(lo, basis) + w * self.history.reanchored(
            hi, basis
        )
        x = np.asarray(x, dtype=float)
        p = self.history.params
        inside = reconstruct(basis, alpha, np.maximum(x, basis.x_B_ref))
        return np.where(x >= basis.x_B_ref, inside, p.K - p.S_star * np.exp(x))


def solve_collocation(
    bs: BoundaryState,
    tc: TimeChange,
    p: ParamSet,
    b: ELBasis = ELBasis(),
    last: Optional[int] = None,
    balance_tol: float = BALANCE_TOL,
) -> CollocationSolution:
    """
    March the expansion over the solved boundary nodes, storing α at every
    node so the jump source of later nodes can use it.

    The boundary itself comes from the Volterra solver. At each node the
    boundary residual above is evaluated there and recorded; a warning is
    logged when it does not vanish, since its own root is the strike.
    """
    if not bs.is_solved:
        raise StateError("the boundary must be fully solved before collocation")
    b = b.check()
    last = len(bs) - 1 if last is None else last
    if not 0 <= last < len(bs):
        raise ValueError(f"last={last} is outside [0, {len(bs)})")

    history = CoefficientHistory(p)
    # Node 0 enters the jump source as zero, like the first row of the price table.
    history.append(float(bs.tau_nodes[0]), b.anchored(float(bs.x_B[0])), np.zeros(b.N))
    balances = []  # type: List[NodeBalance]
    off = []  # type: List[int]
    for i in range(1, last + 1):
        tau = float(bs.tau_nodes[i])
        x_B = float(bs.x_B[i])
        system = assemble_discretized_system(b, bs, tc, p, tau, history=history)
        alpha = system.solve()
        history.append(tau, system.basis, alpha)

        scale = p.S_star * (math.exp(p.k) + math.exp(x_B)) * float(bs.phi_at[i]) / float(bs.h_at[i])
        balance = system.residual(x_B)
        value_gap = float(system.price(alpha, x_B)[0]) - (p.K - p.S_star * math.exp(x_B))
        balances.append(NodeBalance(i, balance, value_gap))
        if abs(balance) > balance_tol * scale:
            off.append(i)
        logger.debug("collocation node %d: value gap %.3e", i, value_gap)
    if off:
        worst = max(balances, key=lambda nb: abs(nb.balance))
        logger.warning(
            "boundary residual is not zero at %d of %d nodes (largest %.6g at node %d); "
            "its only root is the strike",
            len(off),
            len(balances),
            worst.balance,
            worst.node,
        )
    return CollocationSolution(bs, history, balances)

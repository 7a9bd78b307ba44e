"""
Sequential solver for the early-exercise boundary.

At every node of the backward-time grid two unknowns are found together:
the log-boundary x_B, from a scalar algebraic equation, and the boundary
Gamma P_xx, from a linear Volterra equation of the second kind whose past
is already known. The two are alternated until they stop moving.

G at the boundary is the datum g, so the boundary equation holds no
P_xx: x_B settles on the first pass at `closed_form_boundary`, and only
the Gamma iterates.
"""

import logging
import math
import time
import warnings
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import optimize  # type: ignore

from .greens import (
    BoundaryState,
    G_at_boundary,
    Layer,
    layer_integral,
    terminal_gradient,
)
from .params import ParamSet, TimeChange, build_time_change
from .typedefs import NodeIndex

logger = logging.getLogger(__name__)

# Below this the e^{x_B} coefficient of the boundary equation is taken as zero.
DEGENERATE_COEFFICIENT = 1e-12
# Below this the node equation for P_xx has no unique solution.
DEGENERATE_PIVOT = 1e-14
MAX_WIDENINGS = 10
INITIAL_BRACKET = 0.5
# Growth factor of calendar steps away from expiry on the geometric grid.
GEOMETRIC_RATIO = 1.2


class GridKind(Enum):
    UNIFORM = "uniform"
    GEOMETRIC = "geometric"


class YPrimeAt(Enum):
    """
    Where y' is evaluated inside the density bracket of the Gamma equation.
    """

    TAU = "tau"
    S = "s"


class SolverConfig(NamedTuple):
    M: int = 20
    node_tol: float = 1e-8
    max_iters: int = 50
    root_tol: float = 1e-10
    grid: GridKind = GridKind.UNIFORM
    yprime_at: YPrimeAt = YPrimeAt.TAU
    cache_integrals: bool = True

    def validated(self) -> "SolverConfig":
        if self.M < 2:
            raise ValueError(f"need at least 2 time steps, got M={self.M}")
        if not (self.node_tol > 0 and self.root_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        return self


class NodeDiagnostics(NamedTuple):
    node: int
    iterations: int
    residual_xB: float
    residual_Pxx: float
    converged: bool
    evaluations: int = 0


class SolverError(RuntimeError):
    """
    Raised when a node cannot be solved. Carries the node index and the
    last diagnostics, if any.
    """

    def __init__(self, message: str, node: int, diagnostics: Optional[NodeDiagnostics] = None):
        super().__init__(f"node {node}: {message}")
        self.node = node
        self.diagnostics = diagnostics


class SingularLimitError(SolverError):
    """
    Raised for λ ≡ 0 with a constant φ, where the jump coupling vanishes
    and the representation used here degenerates. Price such models with
    the tree or finite-difference oracles instead.
    """


class NegativeGammaWarning(UserWarning):
    """
    A committed boundary Gamma came out negative.
    """


def time_grid(p: ParamSet, tc: TimeChange, cfg: SolverConfig) -> np.ndarray:
    """
    Backward-time nodes τ(t_i) for calendar times stepping back from T.
    """
    steps = np.arange(cfg.M + 1, dtype=float)
    if cfg.grid is GridKind.UNIFORM:
        elapsed = p.T * steps / cfg.M
    else:
        elapsed = p.T * (GEOMETRIC_RATIO**steps - 1.0) / (GEOMETRIC_RATIO**cfg.M - 1.0)
    taus = np.array([tc.tau(p.T - e) for e in elapsed])
    taus[0] = 0.0
    return taus


def init_node0(p: ParamSet, tc: TimeChange, cfg: Optional[SolverConfig] = None) -> BoundaryState:
    """
    Set up the grid and commit node 0: the boundary starts at the strike
    and the Gamma is -h(T) g(0) since every past integral is empty.
    """
    cfg = (cfg or SolverConfig()).validated()
    if p.kou is not None:
        raise SolverError(
            "the boundary iteration covers the exponential model only; "
            "price Kou models with the finite-difference oracle",
            node=0,
        )
    if p.is_singular_limit:
        raise SingularLimitError(
            "λ ≡ 0 with constant φ is the singular limit of this method; "
            "use the tree or finite-difference oracle",
            node=0,
        )
    bs = BoundaryState(p, tc, time_grid(p, tc, cfg))
    bs.stage(0, p.k)
    bs.Pxx[0] = -bs.h_at[0] * bs.g[0]
    bs.commit(0)
    return bs


def gamma_integrals(
    tau: float, y_tau: float, s_nodes, y_nodes, history_density
) -> Tuple[float, float]:
    """
    The two pieces of ∫_0^τ m(s) (y(τ)-y(s)) e^{-(y(τ)-y(s))²/4ω} / (2√π ω^{3/2}) ds
    when m interpolates history_density at the past nodes and the unknown
    Γ(τ) at τ: returns (history, pivot) with the integral equal to
    history + (pivot - 1)·Γ(τ).
    """
    zeros = np.zeros(len(s_nodes))
    history = layer_integral(Layer.SINGLE, tau, y_tau, s_nodes, y_nodes, history_density, 0.0)
    own = layer_integral(Layer.SINGLE, tau, y_tau, s_nodes, y_nodes, zeros, 1.0)
    return history, 1.0 + own


def closed_form_boundary(bs: BoundaryState, i: int) -> float:
    """
    The root of the boundary equation at node i. G at the boundary is the
    datum g, so the equation reduces to e^k(1 - a_j - φ) = (1 - a_j)e^{x_B}
    and P_xx drops out.
    """
    a_j, phi = float(bs.a_j_at[i]), float(bs.phi_at[i])
    if abs(1.0 - a_j) < DEGENERATE_COEFFICIENT:
        raise SolverError(f"boundary equation is degenerate: 1 - a_j = {1.0 - a_j:.3e}", node=i)
    ratio = (1.0 - a_j - phi) / (1.0 - a_j)
    if ratio <= 0.0:
        raise SolverError(f"boundary equation has no root: e^{{x_B}} ratio {ratio:.3e}", node=i)
    return bs.params.k + math.log(ratio)


class _PastSums(NamedTuple):
    gamma_history: float
    pivot: float
    density_integral: float


class VolterraStepper:
    """
    Solves one node at a time, caching past-time partial sums keyed by the
    trial boundary position so the fixed-point loop doesn't rebuild them.
    """

    def __init__(self, bs: BoundaryState, cfg: SolverConfig) -> None:
        self.bs = bs
        self.cfg = cfg
        self._cache = {}  # type: Dict[Tuple[int, float], _PastSums]
        self.evaluations = 0

    @property
    def params(self) -> ParamSet:
        return self.bs.params

    def boundary_residual(self, i: int, x_B: float) -> float:
        """
        e^k[1 - a_j] - [1 + φ - a_j] e^{x_B} - (h/S_*) G(τ, y, y) at node i.

        G at the boundary is the datum g, which does not involve P_xx, so
        this is a function of x_B alone with the single root
        `closed_form_boundary`. Moving the datum's S_*φe^k/h over to the
        left turns e^k[1 - a_j] into e^k[1 - a_j - φ]; the homogeneous and
        jump parts of the bracketed representation give e^k[φ - a_j]
        instead, and that form has no root for 0 < a_j < 1.
        """
        bs, p = self.bs, self.params
        self.evaluations += 1
        bs.stage(i, x_B, bs.Pxx[i])
        a_j, phi, h = bs.a_j_at[i], bs.phi_at[i], bs.h_at[i]
        G = G_at_boundary(bs, bs.time_change, p, float(bs.tau_nodes[i]))
        return (
            math.exp(p.k) * (1.0 - a_j)
            - (1.0 + phi - a_j) * math.exp(x_B)
            - h / p.S_star * G
        )

    def solve_xB(self, i: int, Pxx_trial: float) -> float:
        bs, p = self.bs, self.params
        coefficient = 1.0 + bs.phi_at[i] - bs.a_j_at[i]
        if abs(coefficient) < DEGENERATE_COEFFICIENT:
            raise SolverError(
                f"boundary equation is degenerate: 1 + φ - a_j = {coefficient:.3e}", node=i
            )
        bs.Pxx[i] = Pxx_trial
        previous = float(bs.x_B[i - 1])

        def residual(x_B: float) -> float:
            return self.boundary_residual(i, x_B)

        width = INITIAL_BRACKET
        low, high = previous - width, previous
        f_low, f_high = residual(low), residual(high)
        widenings = 0
        while np.sign(f_low) == np.sign(f_high) and f_low != 0.0:
            if widenings == MAX_WIDENINGS:
                raise SolverError(
                    f"no sign change in [{low:.6g}, {high:.6g}] "
                    f"after {MAX_WIDENINGS} widenings",
                    node=i,
                    diagnostics=NodeDiagnostics(i, 0, abs(f_low), math.nan, False),
                )
            widenings += 1
            width *= 2.0
            low = previous - width
            high = min(p.k, previous + width - INITIAL_BRACKET)
            f_low, f_high = residual(low), residual(high)

        if f_low == 0.0:
            root = low
        elif f_high == 0.0:
            root = high
        else:
            root = optimize.brentq(residual, low, high, xtol=self.cfg.root_tol, maxiter=200)
        bs.stage(i, root, Pxx_trial)
        return float(root)

    def _slope(self, i: int) -> float:
        """
        y' at node i as the backward difference over the last sub-interval;
        zero at node 1, whose only neighbour is the expiry jump.
        """
        bs = self.bs
        if i < 2:
            return 0.0
        step = float(bs.tau_nodes[i] - bs.tau_nodes[i - 1])
        return float(bs.y[i] - bs.y[i - 1]) / step

    def _past_sums(self, i: int, y_i: float, yprime_i: float) -> _PastSums:
        key = (i, y_i)
        if self.cfg.cache_integrals and key in self._cache:
            return self._cache[key]

        bs, p = self.bs, self.params
        tau = float(bs.tau_nodes[i])
        s = bs.tau_nodes[:i]
        y_past = bs.y[:i]
        h_i = float(bs.h_at[i])

        gamma_history, pivot = gamma_integrals(
            tau, y_i, s, y_past, h_i * bs.Pxx[:i] / bs.h_at[:i]
        )

        if self.cfg.yprime_at is YPrimeAt.TAU:
            slope = np.full(i + 1, yprime_i)
        else:
            slope = bs.yprime()[: i + 1]
            slope[i] = yprime_i
        g = bs.g[: i + 1]
        reach = p.S_star * bs.phi_at[: i + 1] * np.exp(bs.x_B[: i + 1]) / bs.h_at[: i + 1]
        density_integral = (
            layer_integral(Layer.SINGLE, tau, y_i, s, y_past, reach[:i], float(reach[i]))
            + layer_integral(Layer.DOUBLE, tau, y_i, s, y_past, g[:i], float(g[i]))
            + layer_integral(
                Layer.PLAIN, tau, y_i, s, y_past, (g * slope)[:i], float(g[i] * slope[i])
            )
        )

        sums = _PastSums(gamma_history, pivot, density_integral)
        if self.cfg.cache_integrals:
            self._cache[key] = sums
        return sums

    def solve_Pxx(self, i: int, x_B: float) -> float:
        """
        The node-i Gamma from the twice-differentiated representation.

        Differentiating twice and moving terms leaves the density bracket
        [S_*φΔe^{x_B}/h + g(1 - Δ²/2ω + y')] under the s-integral, not the
        single-layer density Ψ + y'g that `Gz_at_boundary` integrates; both
        are assembled from the same layer limits and terminal term.
        """
        bs, p = self.bs, self.params
        bs.stage(i, x_B, bs.Pxx[i])
        tau = float(bs.tau_nodes[i])
        y_i = float(bs.y[i])
        sums = self._past_sums(i, y_i, self._slope(i))
        h, phi, g = float(bs.h_at[i]), float(bs.phi_at[i]), float(bs.g[i])
        terminal = terminal_gradient(p, float(bs.f_at[i]), tau, y_i)
        forcing = (
            p.S_star * phi * phi * (math.exp(p.k) - math.exp(x_B))
            - h * (g + terminal - sums.density_integral)
            - bs.a_j_at[i] / h * p.S_star * math.exp(x_B)
        )
        if abs(sums.pivot) < DEGENERATE_PIVOT:
            raise SolverError(f"Gamma equation is degenerate: pivot {sums.pivot:.3e}", node=i)
        value = (forcing - sums.gamma_history) / sums.pivot
        bs.stage(i, x_B, value)
        return float(value)

    def advance(self, i: int) -> NodeDiagnostics:
        bs, cfg = self.bs, self.cfg
        if i != bs.n_committed or i == 0:
            raise SolverError(f"expected to advance node {bs.n_committed}", node=i)

        x_B = float(bs.x_B[i - 1])
        Pxx = float(bs.Pxx[i - 1])
        self.evaluations = 0
        delta_x = delta_P = math.inf
        for iteration in range(1, cfg.max_iters + 1):
            new_x_B = self.solve_xB(i, Pxx)
            new_Pxx = self.solve_Pxx(i, new_x_B)
            delta_x = abs(new_x_B - x_B)
            delta_P = abs(new_Pxx - Pxx) / (1.0 + abs(new_Pxx))
            x_B, Pxx = new_x_B, new_Pxx
            if not (math.isfinite(x_B) and math.isfinite(Pxx)):
                break
            if max(delta_x, delta_P) < cfg.node_tol:
                bs.stage(i, x_B, Pxx)
                bs.commit(i)
                self._cache.clear()
                if Pxx < 0:
                    warnings.warn(
                        f"negative boundary Gamma {Pxx:.6g} at node {i}", NegativeGammaWarning
                    )
                expected = closed_form_boundary(bs, i)
                if abs(x_B - expected) > 1e3 * cfg.root_tol:
                    logger.warning(
                        "node %d: root %.12g is off the closed form %.12g", i, x_B, expected
                    )
                diagnostics = NodeDiagnostics(
                    i, iteration, delta_x, delta_P, True, self.evaluations
                )
                logger.debug("committed %r: x_B=%.12g Pxx=%.12g", diagnostics, x_B, Pxx)
                return diagnostics

        raise SolverError(
            f"no convergence after {cfg.max_iters} iterations "
            f"(|Δx_B|={delta_x:.3e}, |ΔP_xx|={delta_P:.3e})",
            node=i,
            diagnostics=NodeDiagnostics(i, cfg.max_iters, delta_x, delta_P, False),
        )


def solve_xB_node(
    bs: BoundaryState, i: NodeIndex, Pxx_trial: float, cfg: Optional[SolverConfig] = None
) -> float:
    """
    Root of the algebraic boundary equation at node i by bracketing and
    Brent's method. The bracket starts at [x_B(τ_{i-1}) - ½, x_B(τ_{i-1})]
    and widens downward (and up towards k) by doubling.
    """
    _check_next(bs, i)
    return VolterraStepper(bs, (cfg or SolverConfig()).validated()).solve_xB(i, Pxx_trial)


def solve_Pxx_node(
    bs: BoundaryState, i: NodeIndex, xB_fixed: float, cfg: Optional[SolverConfig] = None
) -> float:
    """
    The node-i Gamma from the discretized Volterra equation, with the
    boundary held at xB_fixed.
    """
    _check_next(bs, i)
    return VolterraStepper(bs, (cfg or SolverConfig()).validated()).solve_Pxx(i, xB_fixed)


def advance_node(
    bs: BoundaryState, i: NodeIndex, cfg: Optional[SolverConfig] = None
) -> NodeDiagnostics:
    _check_next(bs, i)
    return VolterraStepper(bs, (cfg or SolverConfig()).validated()).advance(i)


def _check_next(bs: BoundaryState, i: int) -> None:
    if i < 1 or i != bs.n_committed:
        raise SolverError(
            f"nodes must be solved in order; next is {bs.n_committed}", node=i
        )


class BoundarySolution(NamedTuple):
    state: BoundaryState
    diagnostics: List[NodeDiagnostics]
    seconds: float

    @property
    def iterations(self) -> List[int]:
        return [d.iterations for d in self.diagnostics]


def solve_boundary_with_diagnostics(
    p: ParamSet, tc: Optional[TimeChange] = None, cfg: Optional[SolverConfig] = None
) -> BoundarySolution:
    cfg = (cfg or SolverConfig()).validated()
    tc = tc or build_time_change(p)
    started = time.perf_counter()
    bs = init_node0(p, tc, cfg)
    stepper = VolterraStepper(bs, cfg)
    diagnostics = [NodeDiagnostics(0, 0, 0.0, 0.0, True)]
    for i in range(1, len(bs)):
        diagnostics.append(stepper.advance(i))
    seconds = time.perf_counter() - started
    logger.info(
        "K=%g: %d nodes in %.3fs, at most %d iterations per node",
        p.K,
        len(bs),
        seconds,
        max(d.iterations for d in diagnostics),
    )
    return BoundarySolution(bs, diagnostics, seconds)


def solve_boundary(
    p: ParamSet, tc: Optional[TimeChange] = None, cfg: Optional[SolverConfig] = None
) -> BoundaryState:
    """
    Commit nodes 0..M in order and return the solved boundary. The spot
    boundary is S_B(t_i) = S_* e^{x_B(τ_i)}.
    """
    return solve_boundary_with_diagnostics(p, tc, cfg).state

"""
Reference solvers for validation: a trinomial tree for constant-coefficient
Black–Scholes, and a finite-difference PIDE solver with a penalty
iteration for the jump models.
"""

import logging
import math
from enum import Enum
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import sparse  # type: ignore
from scipy.sparse import linalg as sparse_linalg  # type: ignore

from .params import ParamSet

logger = logging.getLogger(__name__)

# Startup steps taken fully implicit before switching to Crank–Nicolson.
RANNACHER_STEPS = 2
MAX_PENALTY_ITERATIONS = 100
# Prices this far above K mean the scheme has blown up.
INSTABILITY_MARGIN = 1e-3


class OracleError(RuntimeError):
    """
    Raised when a reference solver is misconfigured or its result cannot
    be trusted.
    """


class OptionKind(Enum):
    PUT = "put"
    CALL = "call"


class TreeConfig(NamedTuple):
    r: float
    q: float
    sigma: float
    T: float
    K: float
    steps: int = 400

    @classmethod
    def from_params(cls, p: ParamSet, steps: int = 400) -> "TreeConfig":
        """
        The tree only handles constant coefficients and no jumps.
        """
        if p.model != "no-jump":
            raise OracleError(f"the tree needs a no-jump model, got {p.model}")
        for name in ("r", "q", "sigma"):
            if not getattr(p, name).is_constant:
                raise OracleError(f"the tree needs a constant {name}")
        return cls(float(p.r(0.0)), float(p.q(0.0)), float(p.sigma(0.0)), p.T, p.K, steps)

    def check(self) -> "TreeConfig":
        if self.steps < 10:
            raise ValueError(f"the tree needs at least 10 steps, got {self.steps}")
        if not (self.sigma > 0 and self.T > 0 and self.K > 0):
            raise ValueError("sigma, T and K must be positive")
        return self


class BoundaryCurve(NamedTuple):
    t: np.ndarray
    S_B: np.ndarray


class TreeResult(NamedTuple):
    price: Callable[[float], float]
    boundary: BoundaryCurve


def _tree(cfg: TreeConfig, spot: float, kind: OptionKind):
    steps = cfg.steps
    dt = cfg.T / steps
    dx = cfg.sigma * math.sqrt(3.0 * dt)
    nu = cfg.r - cfg.q - 0.5 * cfg.sigma**2
    spread = (cfg.sigma**2 * dt + nu * nu * dt * dt) / (dx * dx)
    drift = nu * dt / dx
    p_up = 0.5 * (spread + drift)
    p_down = 0.5 * (spread - drift)
    p_mid = 1.0 - p_up - p_down
    if min(p_up, p_down, p_mid) < 0:
        raise OracleError("negative branch probability; use more steps")
    discount = math.exp(-cfg.r * dt)
    sign = 1.0 if kind is OptionKind.CALL else -1.0

    def exercise(level: int):
        S = spot * np.exp(dx * np.arange(-level, level + 1))
        return S, np.maximum(sign * (S - cfg.K), 0.0)

    _S, values = exercise(steps)
    boundary = np.full(steps + 1, np.nan)
    for level in range(steps - 1, -1, -1):
        hold = discount * (p_down * values[:-2] + p_mid * values[1:-1] + p_up * values[2:])
        S, payoff = exercise(level)
        exercised = (payoff > 0) & (payoff >= hold)
        values = np.where(exercised, payoff, hold)
        if np.any(exercised):
            boundary[level] = S[exercised].max() if sign < 0 else S[exercised].min()

    if cfg.q > 0:
        ratio = cfg.r / cfg.q
        boundary[steps] = cfg.K * (min(1.0, ratio) if sign < 0 else max(1.0, ratio))
    else:
        boundary[steps] = cfg.K
    return float(values[0]), boundary


def tree_american(cfg: TreeConfig, option: OptionKind = OptionKind.PUT) -> TreeResult:
    """
    Backward induction on a trinomial lattice with log-step σ√(3Δt). The
    boundary is read off the tree rooted at the strike: the outermost node
    at each level where exercise is optimal.
    """
    cfg = cfg.check()
    _price, boundary = _tree(cfg, cfg.K, option)
    times = np.linspace(0.0, cfg.T, cfg.steps + 1)

    def price(spot: float) -> float:
        if not spot > 0:
            raise ValueError(f"spot must be positive, got {spot}")
        return _tree(cfg, spot, option)[0]

    return TreeResult(price, BoundaryCurve(times, boundary))


class FDConfig(NamedTuple):
    x_width: float = 8.0
    Nx: int = 400
    Nt: int = 400
    penalty: float = 1e6
    european: bool = False
    penalty_tol: float = 1e-10

    def check(self) -> "FDConfig":
        if self.Nx < 50 or self.Nt < 50:
            raise ValueError(f"need Nx, Nt >= 50, got {self.Nx}, {self.Nt}")
        if not self.x_width > 0:
            raise ValueError("x_width must be positive")
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")
        return self


class FDResult(NamedTuple):
    x: np.ndarray
    t: np.ndarray
    prices: np.ndarray
    boundary: BoundaryCurve
    S_star: float

    @property
    def S(self) -> np.ndarray:
        return self.S_star * np.exp(self.x)

    def price(self, spot: float, t: float = 0.0) -> float:
        """
        Linear interpolation in x at the time level nearest t.
        """
        level = int(np.argmin(np.abs(self.t - t)))
        return float(np.interp(math.log(spot / self.S_star), self.x, self.prices[level]))


class _Coefficients(NamedTuple):
    r: float
    q: float
    sigma: float
    lam: float
    drift: float
    discount: float


def _coefficients(p: ParamSet, t: float) -> _Coefficients:
    r, q, sigma, lam = float(p.r(t)), float(p.q(t)), float(p.sigma(t)), float(p.lam(t))
    if p.kou is not None:
        theta1, theta2, prob = float(p.kou.theta1(t)), float(p.kou.theta2(t)), float(p.kou.p(t))
        zeta = prob * theta1 / (theta1 - 1.0) + (1.0 - prob) * theta2 / (theta2 + 1.0) - 1.0
    else:
        phi = float(p.phi(t))
        zeta = phi / (phi + 1.0) - 1.0
    return _Coefficients(r, q, sigma, lam, r - q - 0.5 * sigma * sigma - lam * zeta, r + lam)


def _downward_jumps(values: np.ndarray, x: np.ndarray, rate: float, lower_tail: float):
    """
    rate ∫_{-∞}^{x} e^{-rate(x-η)} V(η) dη by recursion along the grid.
    """
    dx = x[1] - x[0]
    decay = math.exp(-rate * dx)
    out = np.empty_like(values)
    out[0] = lower_tail
    for i in range(1, len(values)):
        out[i] = decay * out[i - 1] + 0.5 * rate * dx * (decay * values[i - 1] + values[i])
    return out


def _upward_jumps(values: np.ndarray, x: np.ndarray, rate: float):
    """
    rate ∫_{x}^{∞} e^{-rate(η-x)} V(η) dη, with V = 0 past the grid.
    """
    dx = x[1] - x[0]
    decay = math.exp(-rate * dx)
    out = np.empty_like(values)
    out[-1] = 0.0
    for i in range(len(values) - 2, -1, -1):
        out[i] = decay * out[i + 1] + 0.5 * rate * dx * (decay * values[i + 1] + values[i])
    return out


def _jump_integral(p: ParamSet, t: float, values: np.ndarray, x: np.ndarray, european: bool):
    """
    ∫ V(x + y) ν(y)/λ dy with the Put's asymptotics beyond the grid.
    """
    x_min = float(x[0])

    def lower_tail(rate: float) -> float:
        if european:
            return float(values[0])
        return p.K - p.S_star * math.exp(x_min) * rate / (rate + 1.0)

    if p.kou is None:
        phi = float(p.phi(t))
        return _downward_jumps(values, x, phi, lower_tail(phi))
    theta1, theta2, prob = float(p.kou.theta1(t)), float(p.kou.theta2(t)), float(p.kou.p(t))
    down = _downward_jumps(values, x, theta2, lower_tail(theta2))
    return prob * _upward_jumps(values, x, theta1) + (1.0 - prob) * down


def _operator(c: _Coefficients, n: int, dx: float):
    diffusion = 0.5 * c.sigma * c.sigma / (dx * dx)
    advection = 0.5 * c.drift / dx
    lower = np.full(n - 1, diffusion - advection)
    main = np.full(n, -2.0 * diffusion - c.discount)
    upper = np.full(n - 1, diffusion + advection)
    # Boundary rows are Dirichlet.
    main[[0, -1]] = 0.0
    upper[0] = 0.0
    lower[-1] = 0.0
    return sparse.diags([lower, main, upper], [-1, 0, 1], format="csr")


def fd_pide_american(cfg: FDConfig, p: ParamSet) -> FDResult:
    """
    Backward time stepping of the pricing PIDE in x = log(S/S_*) on
    [k - w, k + w]: Crank–Nicolson diffusion with Rannacher startup, the
    jump integral taken explicitly, and the early-exercise constraint
    enforced by a penalty iteration. The boundary at each time level is
    the largest x where the constraint binds.
    """
    cfg = cfg.check()
    x = np.linspace(p.k - cfg.x_width, p.k + cfg.x_width, cfg.Nx + 1)
    dx = float(x[1] - x[0])
    S = p.S_star * np.exp(x)
    payoff = np.maximum(p.K - S, 0.0)
    dt = p.T / cfg.Nt
    t = np.linspace(0.0, p.T, cfg.Nt + 1)
    identity = sparse.identity(len(x), format="csr")

    prices = np.empty((cfg.Nt + 1, len(x)))
    prices[-1] = payoff
    boundary = np.full(cfg.Nt + 1, np.nan)
    boundary[-1] = p.K
    values = payoff.copy()

    for n in range(cfg.Nt - 1, -1, -1):
        t_new, t_old = t[n], t[n + 1]
        mid = 0.5 * (t_new + t_old)
        c = _coefficients(p, mid)
        L = _operator(c, len(x), dx)
        theta = 1.0 if cfg.Nt - 1 - n < RANNACHER_STEPS else 0.5

        jumps = c.lam * _jump_integral(p, mid, values, x, cfg.european)
        jumps[[0, -1]] = 0.0
        rhs = (identity + (1.0 - theta) * dt * L) @ values + dt * jumps
        A = (identity - theta * dt * L).tocsr()
        if cfg.european:
            rhs[0] = p.K * math.exp(-p.r.integral(t_new, p.T)) - S[0] * math.exp(
                -p.q.integral(t_new, p.T)
            )
        else:
            rhs[0] = payoff[0]
        rhs[-1] = 0.0

        if cfg.european:
            values = sparse_linalg.spsolve(A, rhs)
        else:
            values, binding = _penalty_solve(A, rhs, payoff, values, cfg, n)
            active = np.nonzero(binding & (payoff > 0))[0]
            if len(active):
                boundary[n] = S[active.max()]

        if not np.all(np.isfinite(values)) or np.max(np.abs(values)) > p.K * (
            1.0 + INSTABILITY_MARGIN
        ):
            raise OracleError(
                f"unstable finite-difference solution at t={t_new:.4g}; "
                f"reduce the time step (Nt={cfg.Nt})"
            )
        prices[n] = values

    logger.info("FD oracle: %d x %d grid, K=%g", cfg.Nx, cfg.Nt, p.K)
    return FDResult(x, t, prices, BoundaryCurve(t, boundary), p.S_star)


def _penalty_solve(A, rhs, payoff, guess, cfg: FDConfig, level: int):
    """
    Solve A V = rhs subject to V >= payoff by iterating on the active set
    with a diagonal penalty ρ·1{V < payoff}.
    """
    values = guess
    active = values < payoff
    for _iteration in range(MAX_PENALTY_ITERATIONS):
        weights = np.where(active, cfg.penalty, 0.0)
        weights[[0, -1]] = 0.0
        system = A + sparse.diags(weights, format="csr")
        updated = sparse_linalg.spsolve(system, rhs + weights * payoff)
        new_active = updated < payoff
        change = np.max(np.abs(updated - values)) / max(1.0, np.max(np.abs(updated)))
        values = updated
        if np.array_equal(new_active, active) or change < cfg.penalty_tol:
            return values, new_active
        active = new_active
    logger.warning("penalty iteration did not settle at time level %d", level)
    return values, active


def european_put_fd(p: ParamSet, cfg: Optional[FDConfig] = None) -> FDResult:
    return fd_pide_american((cfg or FDConfig())._replace(european=True), p)

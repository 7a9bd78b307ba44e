"""
Time-dependent model parameters, the coefficients of the reduced pricing
PDE, and the time change that turns it into a heat equation.
"""

import math
from enum import Enum
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize  # type: ignore

from .typedefs import BackwardTime, Time

# Positivity checks are done on this many uniform samples of [0, T].
VALIDATION_SAMPLES = 1001
# Absolute tolerance of the quadrature fallback for antiderivatives.
QUAD_TOL = 1e-12
# Relative step for central differences of tabulated curves.
DERIVATIVE_STEP = 1e-6
# Slack when checking that t lies in [0, T].
DOMAIN_SLACK = 1e-12


class DomainError(ValueError):
    """
    Raised when a time (or backward time) falls outside of the interval on
    which the model is defined.
    """


class ParamError(ValueError):
    """
    Raised when model parameters violate their invariants.
    """


class CurveKind(Enum):
    CONSTANT = "constant"
    EXPONENTIAL = "exponential"
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    TABULATED = "tabulated"


# How many coefficients each closed-form kind takes.
_ARITY = {
    CurveKind.CONSTANT: 1,
    CurveKind.EXPONENTIAL: 2,
    CurveKind.LINEAR: 2,
    CurveKind.QUADRATIC: 2,
}


class ParamCurve:
    """
    A real function of calendar time.

     - constant:     c0
     - exponential:  c0 * exp(-c1 * t)
     - linear:       c0 + c1 * t
     - quadratic:    c0 + c1 * t**2
     - tabulated:    piecewise-linear through (t_i, v_i), flat outside

    Closed-form kinds have exact derivatives and antiderivatives; tabulated
    curves use a central difference for the derivative and integrate their
    linear pieces exactly.
    """

    __slots__ = ("kind", "coefficients", "knots", "values")

    def __init__(
        self,
        kind: CurveKind,
        coefficients: Sequence[float] = (),
        knots: Sequence[float] = (),
        values: Sequence[float] = (),
    ) -> None:
        self.kind = kind
        self.coefficients = tuple(float(c) for c in coefficients)
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)

        if kind is CurveKind.TABULATED:
            if len(self.knots) < 2 or len(self.knots) != len(self.values):
                raise ParamError("a tabulated curve needs at least two (t, value) pairs")
            if np.any(np.diff(self.knots) <= 0):
                raise ParamError("tabulated knots must be strictly increasing")
        elif len(self.coefficients) != _ARITY[kind]:
            raise ParamError(
                f"{kind.value} curve takes {_ARITY[kind]} coefficient(s), "
                f"got {len(self.coefficients)}"
            )
        if not all(math.isfinite(c) for c in self.coefficients):
            raise ParamError(f"non-finite coefficient in {self!r}")

    @classmethod
    def constant(cls, value: float) -> "ParamCurve":
        return cls(CurveKind.CONSTANT, (value,))

    @classmethod
    def exponential(cls, c0: float, rate: float) -> "ParamCurve":
        return cls(CurveKind.EXPONENTIAL, (c0, rate))

    @classmethod
    def linear(cls, c0: float, slope: float) -> "ParamCurve":
        return cls(CurveKind.LINEAR, (c0, slope))

    @classmethod
    def quadratic(cls, c0: float, c2: float) -> "ParamCurve":
        return cls(CurveKind.QUADRATIC, (c0, c2))

    @classmethod
    def tabulated(cls, knots: Sequence[float], values: Sequence[float]) -> "ParamCurve":
        return cls(CurveKind.TABULATED, knots=knots, values=values)

    @property
    def is_constant(self) -> bool:
        if self.kind is CurveKind.CONSTANT:
            return True
        if self.kind is CurveKind.TABULATED:
            return bool(np.all(self.values == self.values[0]))
        return self.coefficients[1] == 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        kind = self.kind
        if kind is CurveKind.TABULATED:
            out = np.interp(t, self.knots, self.values)
        elif kind is CurveKind.CONSTANT:
            out = np.full_like(t, self.coefficients[0])
        else:
            c0, c1 = self.coefficients
            if kind is CurveKind.EXPONENTIAL:
                out = c0 * np.exp(-c1 * t)
            elif kind is CurveKind.LINEAR:
                out = c0 + c1 * t
            else:
                out = c0 + c1 * t * t
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        kind = self.kind
        if kind is CurveKind.TABULATED:
            step = DERIVATIVE_STEP * np.maximum(1.0, np.abs(t))
            out = (self(t + step) - self(t - step)) / (2.0 * step)
        elif kind is CurveKind.CONSTANT:
            out = np.zeros_like(t)
        else:
            c0, c1 = self.coefficients
            if kind is CurveKind.EXPONENTIAL:
                out = -c1 * c0 * np.exp(-c1 * t)
            elif kind is CurveKind.LINEAR:
                out = np.full_like(t, c1)
            else:
                out = 2.0 * c1 * t
        return out if np.ndim(out) else float(out)

    def integral(self, a: float, b: float) -> float:
        """
        ∫_a^b curve(t) dt, exactly.
        """
        kind = self.kind
        if kind is CurveKind.TABULATED:
            return _integrate_piecewise_linear(self.knots, self.values, a, b)
        if kind is CurveKind.CONSTANT:
            return self.coefficients[0] * (b - a)
        c0, c1 = self.coefficients
        if kind is CurveKind.EXPONENTIAL:
            if c1 == 0.0:
                return c0 * (b - a)
            return c0 / c1 * (math.exp(-c1 * a) - math.exp(-c1 * b))
        if kind is CurveKind.LINEAR:
            return c0 * (b - a) + 0.5 * c1 * (b * b - a * a)
        return c0 * (b - a) + c1 * (b**3 - a**3) / 3.0

    def antiderivative(self, t: float) -> float:
        """
        ∫_0^t curve(s) ds
        """
        return self.integral(0.0, t)

    def squared(self) -> Optional["ParamCurve"]:
        """
        The curve's square when it stays inside the closed-form family.
        """
        if self.kind is CurveKind.CONSTANT:
            return ParamCurve.constant(self.coefficients[0] ** 2)
        if self.kind is CurveKind.EXPONENTIAL:
            c0, c1 = self.coefficients
            return ParamCurve.exponential(c0 * c0, 2.0 * c1)
        return None

    def __repr__(self) -> str:
        if self.kind is CurveKind.TABULATED:
            pairs = " ".join(f"{t:g}:{v:g}" for t, v in zip(self.knots, self.values))
            return f"ParamCurve(tabulated {pairs})"
        coefficients = " ".join(f"{c:g}" for c in self.coefficients)
        return f"ParamCurve({self.kind.value} {coefficients})"


def _integrate_piecewise_linear(knots, values, a: float, b: float) -> float:
    if a == b:
        return 0.0
    if a > b:
        return -_integrate_piecewise_linear(knots, values, b, a)
    inside = knots[(knots > a) & (knots < b)]
    ts = np.concatenate(([a], inside, [b]))
    vs = np.interp(ts, knots, values)
    return float(np.sum(0.5 * (vs[1:] + vs[:-1]) * np.diff(ts)))


class KouCurves(NamedTuple):
    theta1: ParamCurve
    theta2: ParamCurve
    p: ParamCurve


class ParamSet:
    """
    The model: rate, dividend yield, volatility, jump intensity and jump
    decay curves, an optional Kou pair of jump decays, plus the option's
    maturity and strike.

    S_* normalizes prices so that x = log(S / S_*); it defaults to the
    strike, which puts the log-strike k at zero.
    """

    __slots__ = ("r", "q", "sigma", "lam", "phi", "kou", "T", "K", "S_star", "k")

    def __init__(
        self,
        r: ParamCurve,
        q: ParamCurve,
        sigma: ParamCurve,
        lam: ParamCurve,
        phi: ParamCurve,
        T: float,
        K: float,
        S_star: Optional[float] = None,
        kou: Optional[KouCurves] = None,
    ) -> None:
        if not T > 0:
            raise ParamError(f"maturity must be positive: T={T}")
        if not K > 0:
            raise ParamError(f"strike must be positive: K={K}")
        S_star = K if S_star is None else S_star
        if not S_star > 0:
            raise ParamError(f"normalization constant must be positive: S_*={S_star}")

        self.r = r
        self.q = q
        self.sigma = sigma
        self.lam = lam
        self.phi = phi
        self.kou = kou
        self.T = float(T)
        self.K = float(K)
        self.S_star = float(S_star)
        self.k = math.log(self.K / self.S_star)
        if not math.isfinite(self.k):
            raise ParamError("log-strike is not finite")

        self._validate()

    def _validate(self) -> None:
        ts = np.linspace(0.0, self.T, VALIDATION_SAMPLES)
        for name in ("r", "q", "sigma", "lam", "phi"):
            if not np.all(np.isfinite(getattr(self, name)(ts))):
                raise ParamError(f"{name}(t) is not finite on [0, T]")
        if np.any(self.sigma(ts) <= 0):
            raise ParamError("sigma(t) must be positive on [0, T]")
        if np.any(self.lam(ts) < 0):
            raise ParamError("lambda(t) must be non-negative on [0, T]")
        if np.any(self.phi(ts) <= 0):
            raise ParamError("phi(t) must be positive on [0, T]")

        if self.kou is not None:
            if np.any(self.kou.theta1(ts) <= 1):
                raise ParamError("theta1(t) must exceed 1 on [0, T]")
            if np.any(self.kou.theta2(ts) <= 0):
                raise ParamError("theta2(t) must be positive on [0, T]")
            p = self.kou.p(ts)
            if np.any(p <= 0) or np.any(p >= 1):
                raise ParamError("p(t) must lie strictly between 0 and 1 on [0, T]")

    @property
    def model(self) -> str:
        if self.kou is not None:
            return "kou"
        if self.lam.is_constant and self.lam(0.0) == 0.0:
            return "no-jump"
        return "exponential-jump"

    @property
    def is_singular_limit(self) -> bool:
        """
        λ ≡ 0 with a constant φ: the resolvent trick degenerates.
        """
        ts = np.linspace(0.0, self.T, VALIDATION_SAMPLES)
        return bool(np.all(self.lam(ts) == 0.0)) and self.phi.is_constant

    def check_time(self, t: float) -> Time:
        if not (-DOMAIN_SLACK <= t <= self.T + DOMAIN_SLACK):
            raise DomainError(f"t={t} is outside [0, {self.T}]")
        return Time(min(max(t, 0.0), self.T))

    def replace(self, **changes) -> "ParamSet":
        fields = {
            "r": self.r,
            "q": self.q,
            "sigma": self.sigma,
            "lam": self.lam,
            "phi": self.phi,
            "T": self.T,
            "K": self.K,
            "S_star": self.S_star,
            "kou": self.kou,
        }
        if "K" in changes and "S_star" not in changes and self.S_star == self.K:
            changes["S_star"] = changes["K"]
        fields.update(changes)
        return ParamSet(**fields)

    @classmethod
    def reference_model(cls, K: float, S_star: Optional[float] = None) -> "ParamSet":
        """
        A time-dependent exponential-jump model: r = 0.03 e^{-0.01 t}, q = 0.02,
        σ = 0.5 e^{-0.2 t}, λ = 0.4 + 0.01 t, φ = 0.2 + 0.1 t², T = 1.
        """
        return cls(
            r=ParamCurve.exponential(0.03, 0.01),
            q=ParamCurve.constant(0.02),
            sigma=ParamCurve.exponential(0.5, 0.2),
            lam=ParamCurve.linear(0.4, 0.01),
            phi=ParamCurve.quadratic(0.2, 0.1),
            T=1.0,
            K=K,
            S_star=S_star,
        )

    @classmethod
    def constant(
        cls,
        r: float,
        q: float,
        sigma: float,
        T: float,
        K: float,
        lam: float = 0.0,
        phi: float = 1.0,
        S_star: Optional[float] = None,
    ) -> "ParamSet":
        return cls(
            r=ParamCurve.constant(r),
            q=ParamCurve.constant(q),
            sigma=ParamCurve.constant(sigma),
            lam=ParamCurve.constant(lam),
            phi=ParamCurve.constant(phi),
            T=T,
            K=K,
            S_star=S_star,
        )

    def __repr__(self) -> str:
        return (
            f"ParamSet(model={self.model}, T={self.T}, K={self.K}, S_*={self.S_star}, "
            f"r={self.r!r}, q={self.q!r}, sigma={self.sigma!r}, lam={self.lam!r}, "
            f"phi={self.phi!r})"
        )


class ExpCoeffs(NamedTuple):
    a_d: float
    a_v: float
    a_s: float
    a_j: float


class KouCoeffs(NamedTuple):
    mu: float
    beta: float
    kappa: float


def coeffs_exponential(p: ParamSet, t: float) -> ExpCoeffs:
    """
    Drift, diffusion, discount and jump-feedback coefficients of the
    reduced PDE for u = φP + P_x at calendar time t.
    """
    t = p.check_time(t)
    r, q, sigma = p.r(t), p.q(t), p.sigma(t)
    lam, phi = p.lam(t), p.phi(t)
    return ExpCoeffs(
        a_d=r - q - 0.5 * sigma * sigma + lam / (1.0 + phi),
        a_v=0.5 * sigma * sigma,
        a_s=r + lam,
        a_j=lam * phi - p.phi.derivative(t),
    )


def coeffs_kou(p: ParamSet, t: float) -> KouCoeffs:
    """
    Coefficients of the double-exponential reduction at calendar time t.
    """
    if p.kou is None:
        raise ValueError("the parameter set has no Kou jump curves")
    t = p.check_time(t)
    theta1, theta2, prob = p.kou.theta1(t), p.kou.theta2(t), p.kou.p(t)
    if theta1 <= 1:
        raise ValueError(f"theta1 must exceed 1, got {theta1}")
    lam = p.lam(t)
    d_theta1 = p.kou.theta1.derivative(t)
    d_theta2 = p.kou.theta2.derivative(t)
    return KouCoeffs(
        mu=prob / (theta1 - 1.0) + (1.0 - prob) / (theta2 + 1.0),
        beta=lam * (prob * theta1 - (1.0 - prob) * theta2) + d_theta2 - d_theta1,
        kappa=lam * theta1 * theta2 + d_theta1 * theta2 + theta1 * d_theta2,
    )


class TimeChange:
    """
    The transform triple

        τ(t) = ∫_t^T σ²/2,   f(t) = ∫_T^t a_d,   h(t) = exp ∫_T^t a_s

    and the inverse map t(τ). Antiderivatives are exact when every term
    allows it, otherwise adaptive quadrature is used.
    """

    def __init__(self, p: ParamSet) -> None:
        self.params = p
        self.T = p.T

        sigma_squared = p.sigma.squared()
        self._half_variance = (
            (lambda a, b: 0.5 * sigma_squared.integral(a, b))  # type: ignore
            if sigma_squared is not None
            else _quadrature(lambda s: 0.5 * p.sigma(s) ** 2)
        )
        if p.lam.is_constant and p.phi.is_constant:
            jump_share = float(p.lam(0.0)) / (1.0 + float(p.phi(0.0)))
            self._jump_drift = lambda a, b: jump_share * (b - a)  # type: Callable
        else:
            self._jump_drift = _quadrature(lambda s: p.lam(s) / (1.0 + p.phi(s)))

        self.tau_max = BackwardTime(self.tau(0.0))
        if not self.tau_max > 0:
            raise ParamError("the time change is degenerate: τ(0) = 0")

    def _integral_a_d(self, a: float, b: float) -> float:
        p = self.params
        return (
            p.r.integral(a, b)
            - p.q.integral(a, b)
            - self._half_variance(a, b)
            + self._jump_drift(a, b)
        )

    def tau(self, t: float) -> BackwardTime:
        t = self.params.check_time(t)
        return BackwardTime(self._half_variance(t, self.T))

    def f(self, t: float) -> float:
        t = self.params.check_time(t)
        return -self._integral_a_d(t, self.T)

    def h(self, t: float) -> float:
        t = self.params.check_time(t)
        p = self.params
        return math.exp(-(p.r.integral(t, self.T) + p.lam.integral(t, self.T)))

    def t_of_tau(self, tau: float) -> Time:
        if not (-DOMAIN_SLACK <= tau <= self.tau_max + DOMAIN_SLACK):
            raise DomainError(f"τ={tau} is outside [0, {self.tau_max}]")
        if tau <= 0.0:
            return Time(self.T)
        if tau >= self.tau_max:
            return Time(0.0)
        root = optimize.brentq(
            lambda t: self._half_variance(t, self.T) - tau,
            0.0,
            self.T,
            xtol=1e-15,
            rtol=4 * np.finfo(float).eps,
            maxiter=200,
        )
        return Time(root)

    def at_tau(self, tau: float) -> Tuple[Time, float, float]:
        """
        (t, f, h) at backward time τ.
        """
        t = self.t_of_tau(tau)
        return t, self.f(t), self.h(t)


def _quadrature(integrand: Callable[[float], float]) -> Callable[[float, float], float]:
    def integral(a: float, b: float) -> float:
        if a == b:
            return 0.0
        value, _error = integrate.quad(integrand, a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
        return float(value)

    return integral


def build_time_change(p: ParamSet) -> TimeChange:
    return TimeChange(p)


def describe(p: ParamSet, t: float) -> Dict[str, float]:
    """
    Every curve and coefficient at time t, handy for logging.
    """
    coeffs = coeffs_exponential(p, t)
    out = {
        "t": float(t),
        "r": float(p.r(t)),
        "q": float(p.q(t)),
        "sigma": float(p.sigma(t)),
        "lam": float(p.lam(t)),
        "phi": float(p.phi(t)),
    }
    out.update(coeffs._asdict())
    return out

"""
Parse run configurations.

A configuration is plain text: `[section]` headers, `key = value` lines,
`#` comments. Curves are written as a kind followed by its coefficients:

    [curves]
    r     = exponential 0.03 0.01
    sigma = tabulated 0:0.5 0.5:0.45 1:0.41

Environment overrides are read from the process environment (and a
`.env` file in the working directory):

 - AMERICAN_JUMPS_VERBOSE: log at INFO (a Python literal, e.g. True)
 - AMERICAN_JUMPS_WORKERS: how many strikes to solve concurrently
"""

import os
import re
from ast import literal_eval
from pathlib import Path
from typing import Callable, Dict, Iterator, NamedTuple, Optional, Tuple, Union

from dotenv import find_dotenv, load_dotenv

from .oracle import FDConfig, TreeConfig
from .params import CurveKind, KouCurves, ParamCurve, ParamError, ParamSet
from .volterra import GridKind, SolverConfig, YPrimeAt


def read_environment() -> Tuple[bool, int]:
    """
    Load `.env` from the working directory (variables already set in the
    process environment win), then return (verbose, workers).
    """
    load_dotenv(find_dotenv(usecwd=True))
    verbose = bool(literal_eval(os.environ.get("AMERICAN_JUMPS_VERBOSE", "False")))
    workers = int(literal_eval(os.environ.get("AMERICAN_JUMPS_WORKERS", "1")))
    return verbose, workers


VERBOSE, WORKERS = read_environment()

SECTION_PATTERN = re.compile(r"^\[\s*(\w+)\s*\]$")

MODELS = ("exponential-jump", "kou", "no-jump")
CURVE_NAMES = ("r", "q", "sigma", "lam", "phi", "theta1", "theta2", "p")


class ConfigParseError(Exception):
    """
    Raise when a run configuration cannot be parsed, or describes a model
    that violates its invariants.
    """


class RunConfig(NamedTuple):
    """
    Everything one run needs: the model (minus the strike), the strikes,
    and the solver, pricing, oracle and comparison settings.
    """

    model: str
    T: float
    curves: Dict[str, ParamCurve]
    strikes: Tuple[float, ...]
    S_star: Optional[float] = None
    solver: SolverConfig = SolverConfig()
    xi_truncation: float = 4.0
    xi_points: int = 30
    N: int = 12
    L: float = 10.0
    t: float = 0.0
    spots: Tuple[float, ...] = ()
    tree_steps: int = 400
    fd_nx: int = 400
    fd_nt: int = 400
    fd_width: float = 8.0
    penalty: float = 1e6
    atm_tol: float = 0.01
    wing_tol: float = 0.02
    boundary_tol: float = 0.02

    def params(self, K: float) -> ParamSet:
        """
        The model with strike K.
        """
        curves = self.curves
        kou = None
        if self.model == "kou":
            kou = KouCurves(curves["theta1"], curves["theta2"], curves["p"])
        return ParamSet(
            r=curves["r"],
            q=curves["q"],
            sigma=curves["sigma"],
            lam=curves["lam"],
            phi=curves["phi"],
            T=self.T,
            K=K,
            S_star=self.S_star,
            kou=kou,
        )

    def fd_config(self) -> FDConfig:
        return FDConfig(
            x_width=self.fd_width, Nx=self.fd_nx, Nt=self.fd_nt, penalty=self.penalty
        )

    def tree_config(self, p: ParamSet) -> TreeConfig:
        return TreeConfig.from_params(p, self.tree_steps)

    def spots_for(self, K: float) -> Tuple[float, ...]:
        """
        The configured spots, or 0.8K, K, 1.2K when none are given.
        """
        return self.spots or (0.8 * K, K, 1.2 * K)


Setter = Callable[[str], object]


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigParseError(f"not a number: {text!r}") from None


def _integer(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigParseError(f"not an integer: {text!r}") from None


def _numbers(text: str) -> Tuple[float, ...]:
    return tuple(_number(item) for item in text.replace(",", " ").split())


def _boolean(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigParseError(f"not a boolean: {text!r}")


def parse_curve(text: str) -> ParamCurve:
    """
    `constant c0`, `exponential c0 c1`, `linear c0 c1`, `quadratic c0 c2`
    or `tabulated t0:v0 t1:v1 ...`.
    """
    kind_name, *rest = text.split() or [""]
    try:
        kind = CurveKind(kind_name)
    except ValueError:
        raise ConfigParseError(f"unknown curve kind: {kind_name!r}") from None

    try:
        if kind is CurveKind.TABULATED:
            pairs = [item.partition(":") for item in rest]
            if any(sep != ":" for _t, sep, _v in pairs):
                raise ConfigParseError("tabulated curves are written as t:value pairs")
            return ParamCurve.tabulated(
                [_number(t) for t, _sep, _v in pairs], [_number(v) for _t, _sep, v in pairs]
            )
        coefficients = [_number(c) for c in rest]
        if kind is CurveKind.CONSTANT:
            (c0,) = coefficients
            return ParamCurve.constant(c0)
        c0, c1 = coefficients
        return {
            CurveKind.EXPONENTIAL: ParamCurve.exponential,
            CurveKind.LINEAR: ParamCurve.linear,
            CurveKind.QUADRATIC: ParamCurve.quadratic,
        }[kind](c0, c1)
    except ValueError as error:
        # Wrong arity, or knots the curve itself rejects.
        raise ConfigParseError(f"bad {kind.value} curve {text!r}: {error}") from None


class RunConfigParser:
    """
    Walks the lines of a configuration, one section at a time.
    """

    def __init__(self) -> None:
        self.seen = set()  # type: set
        self.section = None  # type: Optional[str]
        self.model = {}  # type: Dict[str, object]
        self.curves = {}  # type: Dict[str, ParamCurve]
        self.strikes = ()  # type: Tuple[float, ...]
        self.solver = {}  # type: Dict[str, object]
        self.settings = {}  # type: Dict[str, object]

        self.sections = {
            "model": {
                "kind": self.set_model_kind,
                "T": lambda v: self.model.__setitem__("T", _number(v)),
                "S_star": lambda v: self.model.__setitem__("S_star", _number(v)),
            },
            "curves": {name: self.curve_setter(name) for name in CURVE_NAMES},
            "strikes": {"values": self.set_strikes},
            "solver": {
                "M": self.solver_setting("M", _integer),
                "node_tol": self.solver_setting("node_tol", _number),
                "max_iters": self.solver_setting("max_iters", _integer),
                "root_tol": self.solver_setting("root_tol", _number),
                "grid": self.solver_setting("grid", lambda v: _enum(GridKind, v)),
                "yprime_at": self.solver_setting("yprime_at", lambda v: _enum(YPrimeAt, v)),
                "cache_integrals": self.solver_setting("cache_integrals", _boolean),
            },
            "pricing": {
                "xi_truncation": self.setting("xi_truncation", _number),
                "xi_points": self.setting("xi_points", _integer),
                "N": self.setting("N", _integer),
                "L": self.setting("L", _number),
                "t": self.setting("t", _number),
                "spots": self.setting("spots", _numbers),
            },
            "oracle": {
                "tree_steps": self.setting("tree_steps", _integer),
                "fd_nx": self.setting("fd_nx", _integer),
                "fd_nt": self.setting("fd_nt", _integer),
                "fd_width": self.setting("fd_width", _number),
                "penalty": self.setting("penalty", _number),
            },
            "compare": {
                "atm_tol": self.setting("atm_tol", _number),
                "wing_tol": self.setting("wing_tol", _number),
                "boundary_tol": self.setting("boundary_tol", _number),
            },
        }  # type: Dict[str, Dict[str, Setter]]

    def setting(self, key: str, convert: Setter) -> Setter:
        return lambda value: self.settings.__setitem__(key, convert(value))

    def solver_setting(self, key: str, convert: Setter) -> Setter:
        return lambda value: self.solver.__setitem__(key, convert(value))

    def curve_setter(self, name: str) -> Setter:
        return lambda value: self.curves.__setitem__(name, parse_curve(value))

    def set_model_kind(self, value: str) -> None:
        if value not in MODELS:
            raise ConfigParseError(f"model kind must be one of {', '.join(MODELS)}; got {value!r}")
        self.model["kind"] = value

    def set_strikes(self, value: str) -> None:
        self.strikes = _numbers(value)

    def parse_line(self, line: str) -> None:
        header = SECTION_PATTERN.match(line)
        if header:
            name = header.group(1)
            if name not in self.sections:
                raise ConfigParseError(f"unknown section [{name}]")
            self.section = name
            return

        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigParseError(f"expected `key = value`, got {line!r}")
        if self.section is None:
            raise ConfigParseError(f"{key!r} appears before any [section]")
        setters = self.sections[self.section]
        if key not in setters:
            raise ConfigParseError(f"unknown key {key!r} in [{self.section}]")
        if (self.section, key) in self.seen:
            raise ConfigParseError(f"duplicate key {key!r} in [{self.section}]")
        self.seen.add((self.section, key))
        setters[key](value)

    def parse(self, lines: Iterator[str]) -> RunConfig:
        for number, raw in enumerate(lines, start=1):
            line = raw.partition("#")[0].strip()
            if not line:
                continue
            try:
                self.parse_line(line)
            except ConfigParseError as error:
                raise ConfigParseError(f"line {number}: {error}") from None
        return self.finalize()

    def finalize(self) -> RunConfig:
        kind = self.model.get("kind")
        if kind is None:
            raise ConfigParseError("[model] needs a kind")
        if "T" not in self.model:
            raise ConfigParseError("[model] needs a maturity T")

        curves = dict(self.curves)
        if kind == "no-jump":
            curves.setdefault("lam", ParamCurve.constant(0.0))
        # φ only enters the exponential model; elsewhere it is a placeholder.
        if kind != "exponential-jump":
            curves.setdefault("phi", ParamCurve.constant(1.0))
        required = ["r", "q", "sigma", "lam", "phi"]
        if kind == "kou":
            required += ["theta1", "theta2", "p"]
        missing = [name for name in required if name not in curves]
        if missing:
            raise ConfigParseError(f"[curves] is missing {', '.join(missing)} for a {kind} model")
        if kind != "kou" and any(name in curves for name in ("theta1", "theta2", "p")):
            raise ConfigParseError("theta1, theta2 and p only apply to the kou model")

        if not self.strikes:
            raise ConfigParseError("[strikes] needs at least one strike")
        if any(not K > 0 for K in self.strikes):
            raise ConfigParseError("strikes must be positive")

        try:
            solver = SolverConfig(**self.solver).validated()  # type: ignore
        except ValueError as error:
            raise ConfigParseError(f"[solver]: {error}") from None

        config = RunConfig(
            model=str(kind),
            T=float(self.model["T"]),  # type: ignore
            curves=curves,
            strikes=self.strikes,
            S_star=self.model.get("S_star"),  # type: ignore
            solver=solver,
            **self.settings,  # type: ignore
        )
        if config.xi_points < 5:
            raise ConfigParseError(f"xi_points must be at least 5, got {config.xi_points}")
        if any(not S > 0 for S in config.spots):
            raise ConfigParseError("spots must be positive")
        if not 0.0 <= config.t <= config.T:
            raise ConfigParseError(f"pricing time t={config.t} is outside [0, {config.T}]")

        # Building every strike's model validates the curves on [0, T].
        for K in config.strikes:
            try:
                config.params(K)
            except ParamError as error:
                raise ConfigParseError(f"invalid model for K={K:g}: {error}") from None
        return config


def _enum(kind, value: str):
    try:
        return kind(value)
    except ValueError:
        allowed = ", ".join(member.value for member in kind)
        raise ConfigParseError(f"expected one of {allowed}; got {value!r}") from None


def parse_text(config_text: str) -> RunConfig:
    """
    Parse the text of a run configuration.
    """
    return RunConfigParser().parse(iter(config_text.splitlines()))


def load(path: Union[str, Path]) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="UTF-8")
    except OSError as error:
        raise ConfigParseError(f"cannot read {path}: {error}") from None
    return parse_text(text)

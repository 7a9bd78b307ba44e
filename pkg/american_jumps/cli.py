"""
Command line front end.

    american-jumps boundary <config>
    american-jumps price <config> --t 0 --spots 48,60,72
    american-jumps compare <config>
    american-jumps oracle <config>

Every command writes CSV files (header row, 17 significant digits, Unix
newlines) into --out-dir. Exit status: 0 ok, 2 bad configuration,
3 solver failure, 4 tolerance breach, 5 non-finite output.
"""

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from . import config as run_config
from .__version__ import __version__
from .collocation import CollocationError
from .config import ConfigParseError, RunConfig
from .greens import StateError
from .oracle import BoundaryCurve, FDResult, OracleError, fd_pide_american, tree_american
from .params import ParamSet, TimeChange, build_time_change
from .pricer import PriceQuery, PriceTable, price_query
from .typedefs import Time
from .volterra import BoundarySolution, SolverError, solve_boundary_with_diagnostics

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TOLERANCE = 4
EXIT_NON_FINITE = 5

BOUNDARY_HEADER = ("strike", "i", "t", "tau", "S_B", "x_B", "Pxx", "iterations")
DIAGNOSTICS_HEADER = ("strike", "i", "iterations", "residual_xB", "residual_Pxx", "converged")
PRICE_HEADER = ("strike", "t", "S", "price", "intrinsic", "ode_residual", "exercised")
COMPARE_HEADER = (
    "strike",
    "quantity",
    "t",
    "S",
    "reference",
    "value",
    "abs_diff",
    "rel_diff",
    "tolerance",
    "ok",
)
ORACLE_BOUNDARY_HEADER = ("strike", "method", "t", "S_B")
ORACLE_PRICE_HEADER = ("strike", "method", "t", "S", "price")

Cell = Union[int, float, str, bool]
Row = Sequence[Cell]
Result = TypeVar("Result")


class NonFiniteError(ValueError):
    """
    Raised when a result about to be written is NaN or infinite.
    """


class ToleranceError(Exception):
    """
    Raised when a comparison falls outside the configured tolerances.
    """


def format_cell(value: Cell) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite value {value}")
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Row]) -> Path:
    """
    Format every cell first so that nothing is written if any is non-finite.
    """
    try:
        cells = [[format_cell(value) for value in row] for row in rows]
    except NonFiniteError as error:
        raise NonFiniteError(f"{path.name}: {error}") from None
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="UTF-8") as csv_file:
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(cells)
    logger.info("wrote %d row(s) to %s", len(cells), path)
    return path


def for_each_strike(
    work: Callable[[float], Result], strikes: Sequence[float], workers: int
) -> List[Result]:
    """
    Strikes are independent, so they may be solved concurrently; results
    come back in strike order.
    """
    if workers <= 1 or len(strikes) == 1:
        return [work(K) for K in strikes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, strikes))


class StrikeRun(NamedTuple):
    K: float
    params: ParamSet
    time_change: TimeChange
    solution: BoundarySolution


def solve_strike(config: RunConfig, K: float) -> StrikeRun:
    p = config.params(K)
    tc = build_time_change(p)
    return StrikeRun(K, p, tc, solve_boundary_with_diagnostics(p, tc, config.solver))


def price_table(config: RunConfig, run: StrikeRun) -> PriceTable:
    return PriceTable.build(
        run.solution.state,
        run.time_change,
        run.params,
        xi_truncation=config.xi_truncation,
        xi_points=config.xi_points,
        L=config.L,
    )


def boundary_rows(run: StrikeRun) -> List[Row]:
    bs = run.solution.state
    return [
        (
            run.K,
            i,
            float(bs.t_nodes[i]),
            float(bs.tau_nodes[i]),
            float(bs.S_B[i]),
            float(bs.x_B[i]),
            float(bs.Pxx[i]),
            run.solution.diagnostics[i].iterations,
        )
        for i in range(len(bs))
    ]


def diagnostics_rows(run: StrikeRun) -> List[Row]:
    return [
        (run.K, d.node, d.iterations, d.residual_xB, d.residual_Pxx, d.converged)
        for d in run.solution.diagnostics
    ]


def cmd_boundary(config: RunConfig, out_dir: Path, workers: int) -> int:
    runs = for_each_strike(lambda K: solve_strike(config, K), config.strikes, workers)
    write_csv(
        out_dir / "boundary.csv",
        BOUNDARY_HEADER,
        [r for run in runs for r in boundary_rows(run)],
    )
    write_csv(
        out_dir / "boundary_diagnostics.csv",
        DIAGNOSTICS_HEADER,
        [r for run in runs for r in diagnostics_rows(run)],
    )
    for run in runs:
        print(
            f"K={run.K:g}: {len(run.solution.state)} nodes, "
            f"at most {max(run.solution.iterations)} iterations per node, "
            f"{run.solution.seconds:.3f}s"
        )
    return EXIT_OK


def price_rows(config: RunConfig, K: float, t: float, spots: Sequence[float]) -> List[Row]:
    run = solve_strike(config, K)
    table = price_table(config, run)
    result = price_query(table, PriceQuery(Time(t), spots))
    return [
        (
            K,
            t,
            float(S),
            float(result.prices[n]),
            max(K - float(S), 0.0),
            float(result.diagnostics.residuals[n]),
            bool(result.diagnostics.exercised[n]),
        )
        for n, S in enumerate(spots)
    ]


def cmd_price(
    config: RunConfig,
    out_dir: Path,
    workers: int,
    t: Optional[float] = None,
    spots: Optional[Sequence[float]] = None,
) -> int:
    t = config.t if t is None else t
    if not 0.0 <= t <= config.T:
        raise ConfigParseError(f"pricing time t={t} is outside [0, {config.T}]")
    if spots is not None and any(not S > 0 for S in spots):
        raise ConfigParseError("spots must be positive")

    def work(K: float) -> List[Row]:
        return price_rows(config, K, t, spots or config.spots_for(K))

    rows = for_each_strike(work, config.strikes, workers)
    write_csv(out_dir / "price.csv", PRICE_HEADER, [r for per_strike in rows for r in per_strike])
    return EXIT_OK


class Difference(NamedTuple):
    strike: float
    quantity: str
    t: float
    S: Optional[float]
    reference: float
    value: float
    tolerance: float

    @property
    def abs_diff(self) -> float:
        return abs(self.value - self.reference)

    @property
    def rel_diff(self) -> float:
        return self.abs_diff / abs(self.reference) if self.reference else self.abs_diff

    @property
    def ok(self) -> bool:
        # Boundary tolerances are in units of K; price tolerances are relative.
        if self.quantity == "boundary":
            return self.abs_diff <= self.tolerance * self.strike
        return self.rel_diff <= self.tolerance

    @property
    def badness(self) -> float:
        if self.quantity == "boundary":
            return self.abs_diff / (self.tolerance * self.strike)
        return self.rel_diff / self.tolerance

    def row(self) -> Row:
        return (
            self.strike,
            self.quantity,
            self.t,
            "" if self.S is None else self.S,
            self.reference,
            self.value,
            self.abs_diff,
            self.rel_diff,
            self.tolerance,
            self.ok,
        )


def finite_boundary(curve: BoundaryCurve) -> BoundaryCurve:
    keep = np.isfinite(curve.S_B)
    return BoundaryCurve(curve.t[keep], curve.S_B[keep])


def boundary_differences(
    config: RunConfig, K: float, reference: BoundaryCurve, candidate: BoundaryCurve
) -> List[Difference]:
    """
    The candidate's boundary against the reference's, interpolated in t, at
    the candidate's times before expiry.
    """
    reference = finite_boundary(reference)
    candidate = finite_boundary(candidate)
    if not len(reference.t):
        raise OracleError(f"the reference found no exercise region for K={K:g}")
    shared = (candidate.t < config.T) & (candidate.t >= reference.t.min())
    expected = np.interp(candidate.t[shared], reference.t, reference.S_B)
    return [
        Difference(K, "boundary", float(t), None, float(ref), float(value), config.boundary_tol)
        for t, ref, value in zip(candidate.t[shared], expected, candidate.S_B[shared])
    ]


def price_differences(
    config: RunConfig, K: float, reference: Callable[[float], float], candidate: Sequence[float]
) -> List[Difference]:
    spots = config.spots_for(K)
    return [
        Difference(
            K,
            "price",
            0.0,
            float(S),
            float(reference(S)),
            float(value),
            config.atm_tol if math.isclose(S, K) else config.wing_tol,
        )
        for S, value in zip(spots, candidate)
    ]


def compare_strike(config: RunConfig, K: float) -> List[Difference]:
    """
    The finite-difference oracle is the reference. Models in the singular
    limit are checked tree against FD, since the boundary iteration
    refuses them.
    """
    p = config.params(K)
    fd = fd_pide_american(config.fd_config(), p)
    spots = config.spots_for(K)

    if p.is_singular_limit:
        tree = tree_american(config.tree_config(p))
        prices = [tree.price(S) for S in spots]
        return boundary_differences(config, K, fd.boundary, tree.boundary) + price_differences(
            config, K, fd.price, prices
        )

    run = solve_strike(config, K)
    bs = run.solution.state
    result = price_query(price_table(config, run), PriceQuery(Time(0.0), spots), check_ode=False)
    git = BoundaryCurve(np.asarray(bs.t_nodes, dtype=float), np.asarray(bs.S_B, dtype=float))
    return boundary_differences(config, K, fd.boundary, git) + price_differences(
        config, K, fd.price, list(result.prices)
    )


def cmd_compare(config: RunConfig, out_dir: Path, workers: int) -> int:
    per_strike = for_each_strike(lambda K: compare_strike(config, K), config.strikes, workers)
    differences = [d for rows in per_strike for d in rows]
    write_csv(out_dir / "compare.csv", COMPARE_HEADER, [d.row() for d in differences])

    failures = [d for d in differences if not d.ok]
    if failures:
        worst = max(failures, key=lambda d: d.badness)
        raise ToleranceError(
            f"{len(failures)} comparison(s) out of tolerance; worst: K={worst.strike:g} "
            f"{worst.quantity} at t={worst.t:g}"
            + ("" if worst.S is None else f", S={worst.S:g}")
            + f": {worst.value:.10g} vs {worst.reference:.10g} (tolerance {worst.tolerance:g})"
        )
    return EXIT_OK


def oracle_rows(config: RunConfig, K: float) -> Tuple[List[Row], List[Row]]:
    p = config.params(K)
    spots = config.spots_for(K)
    runs = []  # type: List[Tuple[str, BoundaryCurve, Callable[[float], float]]]
    fd = fd_pide_american(config.fd_config(), p)  # type: FDResult
    runs.append(("fd", fd.boundary, fd.price))
    if p.is_singular_limit:
        tree = tree_american(config.tree_config(p))
        runs.append(("tree", tree.boundary, tree.price))

    boundaries = []  # type: List[Row]
    prices = []  # type: List[Row]
    for method, boundary, price in runs:
        curve = finite_boundary(boundary)
        boundaries += [(K, method, float(t), float(S)) for t, S in zip(curve.t, curve.S_B)]
        prices += [(K, method, 0.0, float(S), float(price(S))) for S in spots]
    return boundaries, prices


def cmd_oracle(config: RunConfig, out_dir: Path, workers: int) -> int:
    results = for_each_strike(lambda K: oracle_rows(config, K), config.strikes, workers)
    write_csv(
        out_dir / "oracle_boundary.csv",
        ORACLE_BOUNDARY_HEADER,
        [r for boundaries, _prices in results for r in boundaries],
    )
    write_csv(
        out_dir / "oracle_price.csv",
        ORACLE_PRICE_HEADER,
        [r for _boundaries, prices in results for r in prices],
    )
    return EXIT_OK


def parse_spots(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="american-jumps",
        description="Exercise boundaries and prices of American Puts under jump-diffusions.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--out-dir", type=Path, default=Path("."), help="where CSV files go")
    parser.add_argument(
        "--seedless", action="store_true", help="reserved; nothing here draws random numbers"
    )
    parser.add_argument("--verbose", action="store_true", help="log progress at INFO")
    parser.add_argument(
        "--workers",
        type=int,
        default=run_config.WORKERS,
        help="strikes solved concurrently (default: $AMERICAN_JUMPS_WORKERS or 1)",
    )

    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("boundary", "solve the exercise boundary for every strike"),
        ("price", "price the Put at given spots"),
        ("compare", "check against the finite-difference oracle"),
        ("oracle", "run the reference solvers only"),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("config", type=Path)
        if name == "price":
            command.add_argument("--t", type=float, default=None, help="calendar time")
            command.add_argument("--spots", type=parse_spots, default=None, help="S1,S2,...")
    return parser


def run(args: argparse.Namespace) -> int:
    config = run_config.load(args.config)
    if args.command == "boundary":
        return cmd_boundary(config, args.out_dir, args.workers)
    if args.command == "price":
        return cmd_price(config, args.out_dir, args.workers, args.t, args.spots)
    if args.command == "compare":
        return cmd_compare(config, args.out_dir, args.workers)
    return cmd_oracle(config, args.out_dir, args.workers)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or run_config.VERBOSE else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        return run(args)
    except ConfigParseError as error:
        print(f"{args.config}: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as error:
        print(f"solver failed at node {error.node}: {error}", file=sys.stderr)
        return EXIT_SOLVER
    except (OracleError, CollocationError, StateError) as error:
        print(f"solver failed: {error}", file=sys.stderr)
        return EXIT_SOLVER
    except ToleranceError as error:
        print(error, file=sys.stderr)
        return EXIT_TOLERANCE
    except NonFiniteError as error:
        print(f"non-finite output: {error}", file=sys.stderr)
        return EXIT_NON_FINITE


if __name__ == "__main__":
    sys.exit(main())

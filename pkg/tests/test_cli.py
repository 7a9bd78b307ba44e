#!/usr/bin/env python3
# -*- coding: UTF-8 -*-

"""
Tests for the command line front end.
"""

import csv
import math
from pathlib import Path

import numpy as np
import pytest  # type: ignore

from american_jumps.cli import (
    BOUNDARY_HEADER,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_TOLERANCE,
    Difference,
    NonFiniteError,
    for_each_strike,
    format_cell,
    main,
    write_csv,
)

SMALL = """\
[model]
kind = exponential-jump
T = 1

[curves]
r     = exponential 0.03 0.01
q     = constant 0.02
sigma = exponential 0.5 0.2
lam   = linear 0.4 0.01
phi   = quadratic 0.2 0.1

[strikes]
values = 55, 60

[solver]
M = 6

[pricing]
xi_points = 10
"""


@pytest.fixture
def small_config(tmp_path: Path) -> Path:
    path = tmp_path / "small.cfg"
    path.write_text(SMALL, encoding="UTF-8")
    return path


def read_rows(path: Path):
    with open(path, newline="", encoding="UTF-8") as csv_file:
        return list(csv.DictReader(csv_file))


@pytest.mark.parametrize(
    "value, expected",
    [
        (True, "1"),
        (np.bool_(False), "0"),
        (3, "3"),
        (np.int64(7), "7"),
        (1.5, "1.5"),
        (np.float64(0.1), "0.10000000000000001"),
        ("fd", "fd"),
    ],
)
def test_format_cell(value, expected: str):
    assert format_cell(value) == expected


@pytest.mark.parametrize("value", [math.nan, math.inf, -np.inf])
def test_non_finite_cells(value):
    with pytest.raises(NonFiniteError):
        format_cell(value)


def test_nothing_is_written_for_non_finite_rows(tmp_path: Path):
    path = tmp_path / "out" / "bad.csv"
    with pytest.raises(NonFiniteError) as info:
        write_csv(path, ("a", "b"), [(1.0, 2.0), (3.0, math.nan)])
    assert "bad.csv" in str(info.value)
    assert not path.exists()


def test_csv_layout(tmp_path: Path):
    path = write_csv(tmp_path / "out.csv", ("a", "b"), [(1, 0.25), (2, 1e-20)])
    assert path.read_bytes() == b"a,b\n1,0.25\n2,9.9999999999999995e-21\n"


def test_strike_order_survives_concurrency():
    strikes = [80.0, 50.0, 65.0, 55.0]
    assert for_each_strike(lambda K: 2 * K, strikes, workers=3) == [2 * K for K in strikes]
    assert for_each_strike(lambda K: 2 * K, strikes, workers=1) == [2 * K for K in strikes]


def test_differences():
    boundary = Difference(60.0, "boundary", 0.5, None, 45.0, 45.9, 0.02)
    assert boundary.ok
    assert boundary.row()[3] == ""
    price = Difference(60.0, "price", 0.0, 60.0, 4.0, 4.1, 0.02)
    assert price.rel_diff == pytest.approx(0.025)
    assert not price.ok
    assert price.badness == pytest.approx(1.25)


def test_boundary(small_config: Path, tmp_path: Path, capsys):
    out = tmp_path / "out"
    assert main(["--out-dir", str(out), "boundary", str(small_config)]) == EXIT_OK

    lines = (out / "boundary.csv").read_text(encoding="UTF-8").splitlines()
    assert lines[0] == ",".join(BOUNDARY_HEADER)
    rows = read_rows(out / "boundary.csv")
    assert len(rows) == 2 * 7
    assert [row["strike"] for row in rows[:7]] == ["55"] * 7
    assert float(rows[0]["S_B"]) == 55.0
    assert float(rows[0]["t"]) == 1.0

    diagnostics = read_rows(out / "boundary_diagnostics.csv")
    assert len(diagnostics) == 2 * 7
    assert all(row["converged"] == "1" for row in diagnostics)
    assert "K=60" in capsys.readouterr().out


def test_boundary_output_is_reproducible(small_config: Path, tmp_path: Path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["--out-dir", str(first), "boundary", str(small_config)]) == EXIT_OK
    assert main(["--out-dir", str(second), "--workers", "2", "boundary", str(small_config)]) == 0
    for name in ("boundary.csv", "boundary_diagnostics.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_reference_boundary(reference_config: Path, tmp_path: Path):
    assert main(["--out-dir", str(tmp_path), "boundary", str(reference_config)]) == EXIT_OK
    rows = read_rows(tmp_path / "boundary.csv")
    assert len(rows) == 7 * 21
    assert sorted({float(row["strike"]) for row in rows}) == [50, 55, 60, 65, 70, 75, 80]


def test_price(small_config: Path, tmp_path: Path):
    args = ["--out-dir", str(tmp_path), "price", str(small_config), "--t", "0"]
    assert main(args + ["--spots", "40,60,80"]) == EXIT_OK
    rows = read_rows(tmp_path / "price.csv")
    assert len(rows) == 2 * 3
    deep = rows[0]
    assert deep["exercised"] == "1"
    assert float(deep["price"]) == pytest.approx(15.0)
    assert all(math.isfinite(float(row["price"])) for row in rows)


def test_price_defaults_to_spots_around_the_strike(small_config: Path, tmp_path: Path):
    assert main(["--out-dir", str(tmp_path), "price", str(small_config)]) == EXIT_OK
    rows = read_rows(tmp_path / "price.csv")
    assert [float(row["S"]) for row in rows[:3]] == pytest.approx([44.0, 55.0, 66.0])


@pytest.mark.parametrize("extra", [["--t", "2"], ["--spots", "0,50"]])
def test_bad_price_arguments(small_config: Path, tmp_path: Path, extra):
    assert main(["--out-dir", str(tmp_path), "price", str(small_config)] + extra) == EXIT_CONFIG


def test_bad_config(shared_datadir: Path, tmp_path: Path, capsys):
    bad = shared_datadir / "bad.cfg"
    assert main(["--out-dir", str(tmp_path), "boundary", str(bad)]) == EXIT_CONFIG
    assert "volatility" in capsys.readouterr().err
    assert not (tmp_path / "boundary.csv").exists()


def test_missing_config(tmp_path: Path):
    missing = tmp_path / "missing.cfg"
    assert main(["--out-dir", str(tmp_path), "boundary", str(missing)]) == EXIT_CONFIG


def test_empty_strikes(tmp_path: Path):
    path = tmp_path / "empty.cfg"
    path.write_text(SMALL.replace("values = 55, 60", "values ="), encoding="UTF-8")
    assert main(["--out-dir", str(tmp_path), "boundary", str(path)]) == EXIT_CONFIG


def test_kou_boundary_is_a_solver_failure(kou_config: Path, tmp_path: Path, capsys):
    assert main(["--out-dir", str(tmp_path), "boundary", str(kou_config)]) == EXIT_SOLVER
    assert "node 0" in capsys.readouterr().err


def test_kou_oracle(kou_config: Path, tmp_path: Path):
    assert main(["--out-dir", str(tmp_path), "oracle", str(kou_config)]) == EXIT_OK
    prices = read_rows(tmp_path / "oracle_price.csv")
    assert [row["method"] for row in prices] == ["fd"] * 3
    assert [float(row["S"]) for row in prices] == pytest.approx([80.0, 100.0, 120.0])
    boundary = read_rows(tmp_path / "oracle_boundary.csv")
    assert boundary
    assert all(float(row["S_B"]) <= 100.0 for row in boundary)


def test_nojump_oracle_runs_both_methods(nojump_config: Path, tmp_path: Path):
    assert main(["--out-dir", str(tmp_path), "oracle", str(nojump_config)]) == EXIT_OK
    methods = [row["method"] for row in read_rows(tmp_path / "oracle_price.csv")]
    assert methods == ["fd"] * 5 + ["tree"] * 5


def test_nojump_compare(nojump_config: Path, tmp_path: Path):
    assert main(["--out-dir", str(tmp_path), "compare", str(nojump_config)]) == EXIT_OK
    rows = read_rows(tmp_path / "compare.csv")
    assert {row["quantity"] for row in rows} == {"boundary", "price"}
    assert all(row["ok"] == "1" for row in rows)


def test_compare_tolerance_breach(nojump_config: Path, tmp_path: Path, capsys):
    strict = tmp_path / "strict.cfg"
    text = nojump_config.read_text(encoding="UTF-8")
    strict.write_text(text.replace("boundary_tol = 0.1", "boundary_tol = 1e-9"), encoding="UTF-8")
    assert main(["--out-dir", str(tmp_path), "compare", str(strict)]) == EXIT_TOLERANCE
    assert "out of tolerance" in capsys.readouterr().err
    rows = read_rows(tmp_path / "compare.csv")
    assert any(row["ok"] == "0" for row in rows)


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "american-jumps" in capsys.readouterr().out

#!/usr/bin/env python3
# -*- coding: UTF-8 -*-

"""
Fixtures that:

 - build the time-dependent reference model and its time change
 - solve its exercise boundary (once per session; it is the slow part)
 - tabulate its prices
 - build boundary states with a prescribed boundary
 - open the run configurations in tests/data/
"""

from pathlib import Path

import numpy as np
import pytest  # type: ignore

from american_jumps.greens import BoundaryState
from american_jumps.params import ParamSet, TimeChange, build_time_change
from american_jumps.pricer import PriceTable
from american_jumps.volterra import BoundarySolution, SolverConfig, solve_boundary_with_diagnostics

# Fewer nodes than a production run; enough to exercise every code path.
TEST_NODES = 10


@pytest.fixture(scope="session")
def reference_params() -> ParamSet:
    """
    Return the time-dependent exponential-jump model with K = 60:

        r = 0.03 e^{-0.01 t}, q = 0.02, σ = 0.5 e^{-0.2 t},
        λ = 0.4 + 0.01 t, φ = 0.2 + 0.1 t², T = 1.
    """
    return ParamSet.reference_model(K=60)


@pytest.fixture(scope="session")
def reference_time_change(reference_params: ParamSet) -> TimeChange:
    return build_time_change(reference_params)


@pytest.fixture(scope="session")
def reference_solution(
    reference_params: ParamSet, reference_time_change: TimeChange
) -> BoundarySolution:
    """
    Return the solved boundary of the K = 60 model.
    """
    return solve_boundary_with_diagnostics(
        reference_params, reference_time_change, SolverConfig(M=TEST_NODES)
    )


@pytest.fixture(scope="session")
def reference_boundary(reference_solution: BoundarySolution) -> BoundaryState:
    return reference_solution.state


@pytest.fixture(scope="session")
def reference_prices(
    reference_boundary: BoundaryState, reference_params: ParamSet, reference_time_change: TimeChange
) -> PriceTable:
    """
    Return the ξ-grid price table of the solved K = 60 model.
    """
    return PriceTable.build(reference_boundary, reference_time_change, reference_params)


@pytest.fixture
def synthetic_boundary(
    reference_params: ParamSet, reference_time_change: TimeChange
) -> BoundaryState:
    """
    Return a fully committed state with a smooth boundary falling like
    -0.3√(τ/τ_max) away from the strike and a constant Gamma of ½S_*.
    """
    taus = np.linspace(0.0, reference_time_change.tau_max, 9)
    x_B = -0.3 * np.sqrt(taus / reference_time_change.tau_max)
    Pxx = np.full(len(taus), 0.5 * reference_params.S_star)
    return BoundaryState.synthetic(reference_params, reference_time_change, taus, x_B, Pxx)


@pytest.fixture
def reference_config(shared_datadir: Path) -> Path:
    """
    Return the path of the run configuration for the time-dependent model.
    """
    return shared_datadir / "reference.cfg"


@pytest.fixture
def nojump_config(shared_datadir: Path) -> Path:
    """
    Return the path of a constant-coefficient, jump-free configuration
    (K = 50, r = 0.2, q = 0.1, σ = 0.5, T = 1).
    """
    return shared_datadir / "nojump.cfg"


@pytest.fixture
def kou_config(shared_datadir: Path) -> Path:
    return shared_datadir / "kou.cfg"

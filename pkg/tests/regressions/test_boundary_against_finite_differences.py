"""
With G equal to the datum g on the boundary, the boundary equation is
algebraic and its root K(1 - a_j - φ)/(1 - a_j) sits far above the
boundary the finite-difference PIDE solver finds for the same model. The
gap is a property of that equation, not of the discretization: refining
the grid does not move the root.
"""
import math

import pytest  # type: ignore

from american_jumps import ParamSet, SolverConfig, solve_boundary
from american_jumps.oracle import FDConfig, fd_pide_american


def test_boundary_at_time_zero_is_far_from_the_finite_difference_one():
    p = ParamSet.reference_model(K=60)
    bs = solve_boundary(p, cfg=SolverConfig(M=10))
    fd = fd_pide_american(FDConfig(Nx=200, Nt=200), p)
    fd_boundary = float(fd.boundary.S_B[0])
    assert math.isfinite(fd_boundary)
    # t = 0: a_j = 0.08, φ = 0.2, so S_B = 60·0.72/0.92.
    assert bs.S_B[-1] == pytest.approx(60.0 * 0.72 / 0.92, rel=1e-8)
    assert bs.S_B[-1] - fd_boundary > 0.02 * p.K


def test_refining_the_grid_keeps_the_root():
    p = ParamSet.reference_model(K=60)
    coarse = solve_boundary(p, cfg=SolverConfig(M=5))
    fine = solve_boundary(p, cfg=SolverConfig(M=10))
    assert abs(coarse.S_B[-1] - fine.S_B[-1]) < 1e-6 * p.K

"""
The boundary must leave the strike immediately: one step before expiry the
smooth-fit balance puts it at K(1 - a_j - φ)/(1 - a_j), well below K. The
½e^{x_B} term of the boundary datum belongs to the expiry node only.
"""
import pytest  # type: ignore

from american_jumps import ParamSet, SolverConfig, solve_boundary


def test_boundary_drops_one_step_before_expiry():
    bs = solve_boundary(ParamSet.reference_model(K=60), cfg=SolverConfig(M=10))
    assert bs.S_B[0] == 60.0
    # t = 0.9: λ = 0.409, φ = 0.281, a_j = λφ - φ' = -0.065071.
    assert bs.S_B[1] / 60.0 == pytest.approx(0.784071 / 1.065071, rel=1e-4)

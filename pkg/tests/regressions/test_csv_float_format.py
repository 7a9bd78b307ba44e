"""
CSV output must round-trip doubles exactly, whether the value is a Python
float or a numpy scalar.
"""
import numpy as np

from american_jumps.cli import format_cell


def test_seventeen_significant_digits():
    value = np.float64(44.170034128533571)
    assert float(format_cell(value)) == value
    assert format_cell(np.float64(2.0) / 3.0) == "0.66666666666666663"

import pytest

from relink.netlist import all_pattern_columns, outputs_packed


def exhaustive_equivalent(original, locked, key):
    """Compare all 2^|PI| patterns of two designs (locked one keyed)."""
    pis = original.data_inputs
    assert pis == locked.data_inputs
    cols, total = all_pattern_columns(pis)
    ref = outputs_packed(original, cols, total)
    got = outputs_packed(locked, cols, total, key=key)
    return ref == got


@pytest.fixture
def equiv():
    return exhaustive_equivalent

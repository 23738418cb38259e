import numpy as np
import pytest

# Frozen values from independent oracles (direct formula evaluation, fine grids, mpmath).
D_HALF_QUARTER = 0.14384103622589042
GAIN_HALF_QUARTER_POINT4 = 0.12343003896576284
BSC_CAPACITY = 0.3680642071684971
BINARY_001_02 = {"w_plus": 0.614873, "p_plus": 0.077640273, "value": 0.0753874847468432}
BINARY_004_01 = {"w_plus": 0.534553, "p_plus": 0.06792682, "value": 0.00715901431742539}
T_123 = (3.4641016151377544, 0.07417990022744858)
NCT_FOLDED_3_5_3 = 0.277801181469813645
PVALUE_BOUND_001_HALF = 0.11125449881019481


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance verdicts, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        terminalreporter.write_line(ACCEPTANCE[key])

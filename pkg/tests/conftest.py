import warnings

import pytest

warnings.filterwarnings("ignore", category=DeprecationWarning)


@pytest.fixture(scope="session")
def presets():
    from linkm import curves
    return {name: curves.preset(name) for name in
            ("hopf_plus_far_circle", "borromean", "unlink_separated", "torus_2_2k(1)",
             "torus_2_2k(2)", "torus_2_2k(3)", "chain_3")}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from pneit.geometry import build_electrodes, concentric_design  # noqa: E402
from pneit.kernel import SEKernel, nystrom_eigs  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

K_U = SEKernel(100.0, 0.211)
K_A = SEKernel(1.0, 0.3)


@pytest.fixture(scope="session")
def electrodes():
    return build_electrodes()


@pytest.fixture(scope="session")
def basis():
    return nystrom_eigs(K_A)


@pytest.fixture(scope="session")
def level0(electrodes):
    return concentric_design(0, electrodes)


@pytest.fixture(scope="session")
def forward0(level0, electrodes, basis):
    from pneit.forward import ForwardModel
    fm = ForwardModel(level0, electrodes, K_U)
    fm.bind_basis(basis)
    return fm


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")

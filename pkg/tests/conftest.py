import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skinfusion.config import friction_params, load_config, pad_layout, robot_model

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ref_cfg():
    return load_config()


@pytest.fixture(scope="session")
def ref_model(ref_cfg):
    return robot_model(ref_cfg)


@pytest.fixture(scope="session")
def ref_friction(ref_cfg, ref_model):
    return friction_params(ref_cfg, ref_model.n_joints)


@pytest.fixture(scope="session")
def ref_layout(ref_cfg):
    return pad_layout(ref_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

import numpy as np
import pytest
from hypothesis import settings

from fenepoly import ChainParams, ModelParams, OmegaGrid, assemble_operators, build_config_grid

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def chain():
    return ChainParams(b=(4.0,))


@pytest.fixture(scope="session")
def cfg8(chain):
    return build_config_grid(chain, 8, 8)


@pytest.fixture(scope="session")
def cfg16(chain):
    return build_config_grid(chain, 16, 16)


@pytest.fixture(scope="session")
def cfg32(chain):
    return build_config_grid(chain, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def params():
    return ModelParams(z_int=0.1, k_temp=1.0, dt=0.01, alpha=0.01, eps=0.1, kappa=0.01, L_cut=5.0, lam=0.5)


@pytest.fixture(scope="session", params=["periodic", "noslip"])
def ops4(request, chain, cfg8, params):
    return assemble_operators(OmegaGrid(4, 4, bc=request.param), cfg8, chain, params)


_ACCEPTANCE = {}


@pytest.fixture
def report_criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion; returns ``ok``."""
    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'} {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])

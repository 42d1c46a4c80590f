import math
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from heavylayer import (  # noqa: E402
    DomainConfig,
    LimitModel,
    LimitParams,
    LoadProfile,
    Physics,
    QuintupleParams,
    ThinModel,
    TractionLoad,
    build_domain,
)

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def tiny_config(eps=0.125, **kw):
    base = dict(eps=eps, h_bulk=0.25, m_layer=2, m_refbox=2)
    base.update(kw)
    return DomainConfig(**base)


@pytest.fixture(scope="session")
def tiny_meshes():
    return build_domain(tiny_config())


@pytest.fixture(scope="session")
def thin_q():
    return QuintupleParams(0.125, 0.125, 0.125, 0.125, 8.0)


@pytest.fixture(scope="session")
def limit_lp():
    return LimitParams(1.0, 1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def traction():
    return TractionLoad((0.3, 1.0), LoadProfile("ramp", 1.0, t_ramp=0.25))


@pytest.fixture(scope="session")
def thin_model(tiny_meshes, thin_q, traction):
    return ThinModel.build(thin_q, tiny_meshes, Physics(), traction)


@pytest.fixture(scope="session")
def limit_model(tiny_meshes, limit_lp, traction):
    return LimitModel.build(limit_lp, tiny_meshes, Physics(), traction)


@pytest.fixture(scope="session")
def frozen_model(tiny_meshes, traction):
    return LimitModel.build(LimitParams(1.0, 1.0, math.inf, 1.0), tiny_meshes, Physics(), traction)


def random_state(forms, rng, scale=1.0):
    u = scale * rng.standard_normal(forms.n_dofs)
    u[forms.dirichlet] = 0.0
    return u, scale * rng.standard_normal(forms.n_dofs)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])

import pytest
from hypothesis import HealthCheck, settings

from oscillab.fem import assemble
from oscillab.geometry import DomainFamily, profile_from_spec
from oscillab.mesh import mesh_domain

settings.register_profile("oscillab", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("oscillab")


@pytest.fixture(scope="session")
def sawtooth_family():
    return DomainFamily(profile_from_spec("sawtooth", slope=1.0), (0.2, 0.1, 0.05, 0.025))


@pytest.fixture(scope="session")
def flat_family():
    return DomainFamily(profile_from_spec("flat"), (0.2, 0.1))


@pytest.fixture(scope="session")
def square_system(flat_family):
    return assemble(mesh_domain(flat_family, None, 1 / 16))


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion and echo it to the terminal summary."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(label: str, ok: bool, detail: str = ""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

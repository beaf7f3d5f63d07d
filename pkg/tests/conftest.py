import pytest

from mumdp.instances import tiny_a, tiny_b

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    """Remember one acceptance outcome; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_collection_modifyitems(config, items):
    # the feasibility audit reads every episode run by the other tests, so it goes last
    last = [it for it in items if it.get_closest_marker("audit")]
    rest = [it for it in items if not it.get_closest_marker("audit")]
    items[:] = rest + last


def pytest_configure(config):
    config.addinivalue_line("markers", "audit: runs after every other test")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: [int(p) if p.isdigit() else p for p in k.replace(".", " ").split()]):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"ACCEPTANCE {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def inst_a():
    return tiny_a()


@pytest.fixture(scope="session")
def inst_b():
    return tiny_b()


@pytest.fixture(scope="session")
def model_a(inst_a):
    return inst_a.models()[0]


@pytest.fixture(scope="session")
def models_b(inst_b):
    return inst_b.models()

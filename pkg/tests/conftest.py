import numpy as np
import pytest

from mirrorlink.kinematics import load_robot_model

ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(name): tag a test as one acceptance criterion"
    )
    config.addinivalue_line("markers", "acceptance_suite: module-level marker")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        name = marker.kwargs.get("name", item.name)
        ACCEPTANCE_RESULTS.append((name, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{verdict}  {name}")


def pytest_collection_modifyitems(items):
    # run the acceptance module last so unit failures surface first
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


@pytest.fixture(scope="session")
def model():
    return load_robot_model()


@pytest.fixture(scope="session")
def planar_two_link():
    """2-link planar chain (unit links, both joints about z) used across tests."""
    from mirrorlink.geometry import PoseSE3
    from mirrorlink.kinematics import Joint, KinematicChain

    joints = (
        Joint(axis=np.array([0.0, 0.0, 1.0]), offset=PoseSE3.identity(), lower=-np.pi, upper=np.pi),
        Joint(
            axis=np.array([0.0, 0.0, 1.0]),
            offset=PoseSE3.from_translation(1.0, 0.0, 0.0),
            lower=-np.pi,
            upper=np.pi,
        ),
    )
    return KinematicChain(joints=joints, tool=PoseSE3.from_translation(1.0, 0.0, 0.0))



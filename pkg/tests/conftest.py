import numpy as np
import pytest

from xbdpatch import synth

_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test body sets ``.detail``."""

    class Line:
        detail = ""

    line = Line()
    yield line
    rep = getattr(request.node, "rep_call", None)
    if rep is None:
        status = "ERROR"
    elif rep.skipped:
        status = "SKIP"
    else:
        status = "PASS" if rep.passed else "FAIL"
    _ACCEPTANCE.append(f"[{status}] {request.node.name}: {line.detail}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep
    elif rep.when == "setup" and rep.skipped and "criterion" in item.fixturenames:
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
        _ACCEPTANCE.append(f"[SKIP] {item.name}: {reason}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    spec = synth.FixtureSpec(n_scenes=12, image_size=256, buildings_per_scene=(0, 4),
                             unclassified_weight=0.5, black_region_fraction=0.25, seed=7)
    synth.generate(spec, out)
    return out

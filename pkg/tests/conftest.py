import pytest

from boxseg import synthdata
from boxseg.trainer import TrainData, load_salient, load_val, load_weak


@pytest.fixture(scope="session")
def tiny_dirs(tmp_path_factory):
    """A small on-disk dataset: 12 weak images, 8 salient, 4 validation."""
    root = tmp_path_factory.mktemp("tiny")
    synthdata.generate("weak", 12, 1, root / "weak", size=32)
    synthdata.generate("salient", 8, 1, root / "salient", size=32)
    synthdata.generate("weak", 4, 2, root / "val", size=32)
    return root


@pytest.fixture(scope="session")
def tiny_data(tiny_dirs):
    return TrainData(load_weak(tiny_dirs / "weak" / "manifest.json"),
                     load_salient(tiny_dirs / "salient" / "manifest.json"))


@pytest.fixture(scope="session")
def tiny_val(tiny_dirs):
    return load_val(tiny_dirs / "val" / "eval" / "manifest.json")


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance outcome; printed as a PASS/FAIL line at the end of the session."""
    def record(name, passed, detail=""):
        _ACCEPTANCE[name] = (bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n[1:])):
        passed, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if passed else 'FAIL'}  {detail}")

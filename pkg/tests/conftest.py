import numpy as np
import pytest

from smartpaste.tensor_core import write_image


def smooth_image(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Deterministic low-frequency RGB test image in [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    out = np.empty((h, w, 3))
    for c in range(3):
        acc = np.zeros((h, w))
        for _ in range(3):
            fy, fx = rng.uniform(1, 6, 2)
            acc += np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
        out[..., c] = 0.5 + 0.4 * acc / 3
    return out


@pytest.fixture
def corpus_dir(tmp_path):
    d = tmp_path / "corpus"
    d.mkdir()
    write_image(d / "a.png", smooth_image(80, 96, 1))
    write_image(d / "b.png", smooth_image(96, 72, 2))
    return d


@pytest.fixture
def single_image_dir(tmp_path):
    d = tmp_path / "single"
    d.mkdir()
    write_image(d / "img.png", smooth_image(64, 64, 3))
    return d


# one line per acceptance criterion at the end of the run
_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _ACCEPTANCE[number] = ("PASS" if passed else "FAIL", detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is not None and rep.when == "call" and rep.failed and number not in _ACCEPTANCE:
        _ACCEPTANCE[number] = ("FAIL", str(rep.longrepr).splitlines()[-1][:120])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")

import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("ci")


def central_diff(f, x, h=1e-6):
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel=1e-5, abs_floor=1e-7):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    tol = np.maximum(rel * np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
    assert (err <= tol).all(), f"max err {err.max():.3e}, worst tol {tol[np.argmax(err - tol)]:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``with criterion(n, name) as c: ...; c.detail = ...`` records one verdict line."""
    import contextlib

    @contextlib.contextmanager
    def _record(n, name):
        box = type("Verdict", (), {"detail": ""})()
        try:
            yield box
        except pytest.skip.Exception as exc:
            ACCEPTANCE[n] = f"criterion {n:2d} SKIP  {name}: {exc}"
            raise
        except BaseException:
            ACCEPTANCE[n] = f"criterion {n:2d} FAIL  {name}: {box.detail}"
            raise
        ACCEPTANCE[n] = f"criterion {n:2d} PASS  {name}: {box.detail}"
        print(ACCEPTANCE[n])

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

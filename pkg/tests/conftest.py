import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparseinr.models import ArchSpec
from sparseinr.signals import Signal

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def point_signal(coords, targets, id="pts"):
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(coords.shape[0], -1)
    return Signal(coords, targets, 1, coords.shape[0], id)


def random_signal(rng, n=7, in_dim=2, out_dim=3, id="rand"):
    return point_signal(rng.uniform(0, 1, (n, in_dim)), rng.uniform(0, 1, (n, out_dim)), id)


def small_arch(rng, kind=None, max_width=6):
    kind = kind or ("siren" if rng.random() < 0.5 else "ffn")
    width = int(rng.integers(2, max_width + 1)) & ~1 or 2
    return ArchSpec(kind=kind, in_dim=2, out_dim=int(rng.integers(1, 4)), width=width,
                    hidden_layers=int(rng.integers(1, 4)), omega0=float(rng.uniform(1.0, 6.0)),
                    sigma=float(rng.uniform(0.3, 2.0)), seed=int(rng.integers(0, 2**31)))


LINEAR = ArchSpec(kind="linear", in_dim=1, out_dim=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when == "setup" and rep.passed) or rep.when == "teardown":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed and not detail:
        detail = str(rep.longrepr).strip().splitlines()[-1][:160]
    _CRITERIA[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {detail}")

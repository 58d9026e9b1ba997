import numpy as np
import pytest
import torch

from skillprior.core import Rng

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return Rng(1234)


def random_gaussian(gen: np.random.Generator, shape, mean_scale=1.0, log_std_scale=0.5):
    from skillprior.core import DiagGaussian

    return DiagGaussian(gen.normal(0, mean_scale, shape), gen.uniform(-log_std_scale, log_std_scale, shape))


# one summary line per acceptance criterion, aggregated over the tests marked with it
_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo is not None):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "notes": []})
    entry["ok"] &= call.excinfo is None
    notes = [v for k, v in item.user_properties if k == "detail"]
    if call.excinfo is not None:
        notes.append(f"{item.name} failed: {call.excinfo.typename}")
    entry["notes"].extend(notes)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        verdict = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number} {verdict}  {e['title']}: {'; '.join(e['notes'])}")

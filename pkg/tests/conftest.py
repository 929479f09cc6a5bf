import pytest

from conflict_audit.labels import LABELS
from conflict_audit.modelgate import Prediction


def make_pred(event_id, label, model="m", conf=0.8, rationale=None, strategy="zero_shot"):
    rest = (1 - conf) / 5
    logits = {lab: (conf if lab == label else rest) for lab in LABELS}
    return Prediction(event_id, model, strategy, 0, label, conf, logits,
                      tuple(rationale) if rationale else None, "")


@pytest.fixture
def pred():
    return make_pred


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])

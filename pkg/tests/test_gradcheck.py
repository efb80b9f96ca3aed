import pytest

from actionforecast.exceptions import NumericalError
from actionforecast.gradcheck import (
    check_all,
    cnn_gradcheck,
    require_passing,
    rnn_gradcheck,
    worst_failure,
)
from actionforecast.rnn import RnnModel


def test_all_checks_pass():
    reports = check_all(seed=0)
    assert sorted(reports) == ["cnn-squared", "cnn-xent", "rnn"]
    for name, report in reports.items():
        assert report.passed, (name, report.worst)
    require_passing(reports)


@pytest.mark.parametrize("seed", [1, 2])
def test_rnn_other_seeds(seed):
    assert rnn_gradcheck(seed=seed).passed


def test_cnn_odd_row_count():
    # odd rows exercise the padded pooling window
    assert cnn_gradcheck(seed=3, rows=13).passed


def test_corrupted_gradient_is_reported(mocker):
    original = RnnModel.loss_and_grads

    def corrupted(self, tokens, target):
        loss, grads = original(self, tokens, target)
        grads["label.b"] = grads["label.b"] * 2.0
        return loss, grads

    mocker.patch.object(RnnModel, "loss_and_grads", corrupted)
    report = rnn_gradcheck(seed=0)
    assert not report.passed
    assert report.worst[0] == "label.b"
    assert report.worst[1] == pytest.approx(1 / 3, rel=1e-3)

    reports = {"rnn": report, "cnn-squared": cnn_gradcheck(seed=0)}
    assert worst_failure(reports)[:2] == ("rnn", "label.b")
    with pytest.raises(NumericalError, match="label.b"):
        require_passing(reports)


def test_tight_tolerance_fails():
    assert not rnn_gradcheck(seed=0, tolerance=1e-12).passed


def test_worst_failure_needs_a_failure():
    with pytest.raises(ValueError):
        worst_failure({"rnn": rnn_gradcheck(seed=0)})


@pytest.mark.slow
@pytest.mark.timeout(600)
@pytest.mark.parametrize("seed", range(20))
def test_every_check_passes_across_seeds(seed):
    reports = check_all(seed=seed)
    failed = {name: report.worst for name, report in reports.items() if not report.passed}
    assert not failed

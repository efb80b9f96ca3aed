"""Finite-difference checks of both forecasters' analytic gradients at toy size."""

import logging
from typing import Dict, Tuple

import numpy as np

from .cnn import LOSS_SQUARED, LOSS_XENT, CnnConfig, CnnModel, encode_matrix
from .exceptions import NumericalError
from .nn import GradCheckReport, grad_check
from .rnn import RnnConfig, RnnModel, RnnTarget
from .timeline import SegmentSequence

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4


def _random_segments(
    rng: np.random.Generator, num_classes: int, count: int, max_len: int
) -> SegmentSequence:
    labels = [int(rng.integers(num_classes))]
    while len(labels) < count:
        label = int(rng.integers(num_classes))
        if label != labels[-1]:
            labels.append(label)
    return SegmentSequence.from_pairs(
        (label, int(rng.integers(1, max_len + 1))) for label in labels
    )


def rnn_gradcheck(
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
    hidden_size: int = 8,
    num_classes: int = 4,
    steps: int = 3,
) -> GradCheckReport:
    """Check the RNN loss gradient on one random ``steps``-token example."""
    rng = np.random.default_rng(seed)
    config = RnnConfig(hidden_size=hidden_size, embed_size=hidden_size, seed=seed)
    model = RnnModel.init(num_classes, config, scale=float(steps), rng=rng)
    tokens = np.zeros((steps, num_classes + 1))
    tokens[:, 0] = rng.uniform(0.1, 1.0, size=steps)
    tokens[np.arange(steps), 1 + rng.integers(num_classes, size=steps)] = 1.0
    target = RnnTarget(
        remaining_length=float(rng.uniform(0.0, 1.0)),
        next_length=float(rng.uniform(0.1, 1.0)),
        next_label=int(rng.integers(num_classes)),
    )
    return grad_check(lambda params: model.loss_and_grads(tokens, target), model.params, tolerance)


def cnn_gradcheck(
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
    rows: int = 16,
    num_classes: int = 4,
    loss: str = LOSS_SQUARED,
    batch: int = 2,
) -> GradCheckReport:
    """Check the CNN loss gradient on a small batch of random segment matrices."""
    rng = np.random.default_rng(seed)
    config = CnnConfig(rows=rows, loss=loss, seed=seed)
    model = CnnModel.init(num_classes, config, rng)

    def random_batch():
        return np.stack(
            [
                encode_matrix(_random_segments(rng, num_classes, 3, 20), rows, num_classes).values
                for _ in range(batch)
            ]
        )

    X, Y = random_batch(), random_batch()
    return grad_check(lambda params: model.loss_and_grads(X, Y), model.params, tolerance)


def check_all(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> Dict[str, GradCheckReport]:
    """Run every gradient check; keys name the architecture and loss."""
    reports = {
        "rnn": rnn_gradcheck(seed, tolerance),
        f"cnn-{LOSS_SQUARED}": cnn_gradcheck(seed, tolerance, loss=LOSS_SQUARED),
        f"cnn-{LOSS_XENT}": cnn_gradcheck(seed, tolerance, loss=LOSS_XENT),
    }
    for name, report in reports.items():
        block, error = report.worst
        logger.info(f"{name}: worst block {block} relative error {error:.3e}")
    return reports


def worst_failure(reports: Dict[str, GradCheckReport]) -> Tuple[str, str, float]:
    """(check, parameter block, error) of the largest error among failed checks."""
    failed = [(name, *report.worst) for name, report in reports.items() if not report.passed]
    if not failed:
        raise ValueError("No gradient check failed")
    return max(failed, key=lambda item: item[2])


def require_passing(reports: Dict[str, GradCheckReport]) -> None:
    if all(report.passed for report in reports.values()):
        return
    name, block, error = worst_failure(reports)
    raise NumericalError(
        f"Gradient check failed: {name} block {block} relative error {error:.3e} "
        f"(tolerance {reports[name].tolerance:.0e})"
    )

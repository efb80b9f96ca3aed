"""One-shot matrix forecaster.

The observed segments are drawn into an S x C binary matrix (rows split in
proportion to segment durations), mapped through two conv/ReLU/pool blocks and
two dense layers to an S x C output with l2-normalized (or softmax) rows, then
smoothed along time and decoded row by row into the future labeling.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .checkpoint import Checkpoint
from .exceptions import InputError, NumericalError
from .nn import (
    KERNEL_WIDTH,
    POOL_SIZE,
    AdamState,
    Conv1dParams,
    Params,
    adam_step,
    conv1d_backward,
    conv1d_forward_cached,
    dense_backward,
    dense_forward,
    gaussian_filter_columns,
    glorot_uniform,
    l2_normalize_backward,
    l2_normalize_cached,
    maxpool_backward,
    maxpool_rows_cached,
    parameter_count,
    pooled_rows,
    relu,
    relu_backward,
    softmax,
)
from .timeline import (
    FrameTimeline,
    LabelVocabulary,
    SegmentSequence,
    frames_for_fraction,
    segments_from_frames,
)

logger = logging.getLogger(__name__)

ARCHITECTURE = "cnn-v1"
LOSS_SQUARED = "squared"
LOSS_XENT = "xent"
TRAIN_OBSERVATIONS = (0.1, 0.2, 0.3, 0.5)
FUTURE_FRACTION = 0.5
PROB_FLOOR = 1e-12

# hidden width 900 puts the Breakfast model (S=128, C=48) at about 6M parameters
_REFERENCE_HIDDEN = 900
_REFERENCE_CELLS = 128 * 48

PRESETS = {
    "breakfast": {"rows": 128, "sigma": 3.0},
    "50salads": {"rows": 512, "sigma": 13.0},
    "synthetic": {"rows": 20, "sigma": 1.5, "batch_size": 16},
}


@dataclass
class CnnConfig:
    rows: int = 128
    conv_channels: Tuple[int, int] = (8, 16)
    kernel_width: int = KERNEL_WIDTH
    pool_size: int = POOL_SIZE
    hidden_size: Optional[int] = None
    sigma: Optional[float] = 3.0
    loss: str = LOSS_SQUARED
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if self.rows < 1:
            raise InputError(f"Matrix rows must be >= 1, got {self.rows}")
        if len(self.conv_channels) != 2 or min(self.conv_channels) < 1:
            raise InputError(f"Need two positive feature-map counts, got {self.conv_channels}")
        if self.kernel_width != KERNEL_WIDTH or self.pool_size != POOL_SIZE:
            raise InputError(
                f"Only kernel width {KERNEL_WIDTH} and pool size {POOL_SIZE} are supported"
            )
        if self.sigma is not None and self.sigma <= 0:
            raise InputError(f"Smoothing sigma must be positive, got {self.sigma}")
        if self.loss not in (LOSS_SQUARED, LOSS_XENT):
            raise InputError(f"Unknown CNN loss {self.loss!r}; use squared or xent")
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("Batch size must be >= 1 and epochs >= 0")

    def resolved_hidden(self, num_classes: int) -> int:
        if self.hidden_size:
            return int(self.hidden_size)
        return max(8, int(round(_REFERENCE_HIDDEN * self.rows * num_classes / _REFERENCE_CELLS)))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["conv_channels"] = list(self.conv_channels)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "CnnConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"Unknown CNN config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def preset(cls, name: str, **overrides) -> "CnnConfig":
        try:
            values = dict(PRESETS[name])
        except KeyError:
            raise InputError(f"Unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class SegmentMatrix:
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise InputError(f"Segment matrix must be 2-D, got shape {self.values.shape}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    def row_labels(self) -> np.ndarray:
        """Argmax per row, lowest class index on ties."""
        return np.argmax(self.values, axis=1)


MatrixLike = Union[SegmentMatrix, np.ndarray]


def _values(matrix: MatrixLike) -> np.ndarray:
    if isinstance(matrix, SegmentMatrix):
        return matrix.values
    return np.asarray(matrix, dtype=np.float64)


def row_allocation(lengths: Sequence[int], rows: int) -> List[int]:
    """
    Rows per segment: floor(l / t * S), leftovers by largest remainder.

    Every segment gets at least one row. Segments lifted to one row from a
    zero share take part in leftover distribution last; if the lifts
    overfill the matrix, rows are taken back from the largest blocks.
    """
    total = sum(lengths)
    n = len(lengths)
    if n > rows:
        raise InputError(f"{n} segments do not fit into {rows} matrix rows")
    if total < 1:
        raise InputError("Cannot encode an empty observation")
    products = [length * rows for length in lengths]
    base = [p // total for p in products]
    remainder = [p % total if b > 0 else -1 for p, b in zip(products, base)]
    alloc = [max(1, b) for b in base]
    while sum(alloc) > rows:
        k = max(range(n), key=lambda i: (alloc[i], i))
        alloc[k] -= 1
    order = sorted(range(n), key=lambda i: (-remainder[i], i))
    leftover = rows - sum(alloc)
    k = 0
    while leftover > 0:
        alloc[order[k % n]] += 1
        leftover -= 1
        k += 1
    return alloc


def encode_matrix(observed: SegmentSequence, rows: int, num_classes: int) -> SegmentMatrix:
    """Encode segments as ``rows`` one-hot rows in temporal order."""
    alloc = row_allocation(observed.lengths, rows)
    X = np.zeros((rows, num_classes))
    start = 0
    for seg, count in zip(observed, alloc):
        if seg.label >= num_classes:
            raise InputError(f"Label {seg.label} outside [0, {num_classes})")
        X[start : start + count, seg.label] = 1.0
        start += count
    return SegmentMatrix(X)


def decode_matrix(Y: MatrixLike, horizon_frames: int) -> FrameTimeline:
    """Expand row argmaxes to floor(horizon / S) frames each; leftovers repeat the last row."""
    if horizon_frames < 1:
        raise InputError(f"Horizon must be at least one frame, got {horizon_frames}")
    values = _values(Y)
    labels = np.argmax(values, axis=1)
    per_row = horizon_frames // values.shape[0]
    frames = np.repeat(labels, per_row)
    rest = horizon_frames - frames.size
    if rest:
        frames = np.concatenate([frames, np.full(rest, labels[-1])])
    return FrameTimeline(frames)


def smooth_output(Y: MatrixLike, sigma: float) -> SegmentMatrix:
    return SegmentMatrix(gaussian_filter_columns(_values(Y), sigma))


def cnn_loss(Y_hat: MatrixLike, Y_gt: MatrixLike, mode: str = LOSS_SQUARED) -> float:
    """Squared error averaged over all S*C cells, or row-averaged cross-entropy.

    Batches of shape (B, S, C) are averaged over B.
    """
    pred, target = _values(Y_hat), _values(Y_gt)
    if pred.shape != target.shape:
        raise InputError(f"Prediction {pred.shape} and target {target.shape} differ in shape")
    rows, classes = pred.shape[-2:]
    if mode == LOSS_SQUARED:
        per_example = np.sum((target - pred) ** 2, axis=(-2, -1)) / (rows * classes)
    elif mode == LOSS_XENT:
        labels = np.argmax(target, axis=-1)
        picked = np.take_along_axis(pred, labels[..., None], axis=-1)[..., 0]
        per_example = -np.sum(np.log(np.maximum(picked, PROB_FLOOR)), axis=-1) / rows
    else:
        raise InputError(f"Unknown CNN loss {mode!r}")
    return float(np.mean(per_example))


def make_cnn_examples(
    gt_timeline: FrameTimeline, rows: int, num_classes: int
) -> List[Tuple[SegmentMatrix, SegmentMatrix]]:
    """Four (X, Y) pairs: observe 10/20/30/50% of the video, target the following 50%."""
    total = len(gt_timeline)
    span = frames_for_fraction(FUTURE_FRACTION, total)
    pairs = []
    for alpha in TRAIN_OBSERVATIONS:
        t = frames_for_fraction(alpha, total)
        if t < 1 or span < 1:
            raise InputError(
                f"A {total}-frame video is too short for a {alpha:.0%} observation"
            )
        observed = segments_from_frames(gt_timeline[:t])
        future = segments_from_frames(gt_timeline[t : t + span])
        pairs.append(
            (encode_matrix(observed, rows, num_classes), encode_matrix(future, rows, num_classes))
        )
    return pairs


@dataclass
class _ForwardCache:
    windows1: np.ndarray
    pre1: np.ndarray
    pool_idx1: np.ndarray
    windows2: np.ndarray
    pre2: np.ndarray
    pool_idx2: np.ndarray
    pooled2_shape: tuple
    flat: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    norms: Optional[np.ndarray]


class CnnModel:
    """Two conv/ReLU/max-pool blocks followed by two dense layers."""

    def __init__(
        self, num_classes: int, config: CnnConfig, params: Params, vocabulary_hash: str = ""
    ):
        self.num_classes = num_classes
        self.config = config
        self.params = params
        self.vocabulary_hash = vocabulary_hash
        self._check_shapes()
        self.conv1 = Conv1dParams(params["conv1.kernels"], params["conv1.biases"])
        self.conv2 = Conv1dParams(params["conv2.kernels"], params["conv2.biases"])

    @staticmethod
    def flat_size(config: CnnConfig) -> int:
        return pooled_rows(pooled_rows(config.rows)) * config.conv_channels[1]

    @classmethod
    def init(
        cls,
        num_classes: int,
        config: CnnConfig,
        rng: np.random.Generator,
        vocabulary_hash: str = "",
    ) -> "CnnModel":
        maps1, maps2 = config.conv_channels
        hidden = config.resolved_hidden(num_classes)
        flat = cls.flat_size(config)
        out = config.rows * num_classes
        conv1 = Conv1dParams.init(num_classes, maps1, rng)
        conv2 = Conv1dParams.init(maps1, maps2, rng)
        params = {
            "conv1.kernels": conv1.kernels,
            "conv1.biases": conv1.biases,
            "conv2.kernels": conv2.kernels,
            "conv2.biases": conv2.biases,
            "hidden.W": glorot_uniform(rng, (hidden, flat), flat, hidden),
            "hidden.b": np.zeros(hidden),
            "output.W": glorot_uniform(rng, (out, hidden), hidden, out),
            "output.b": np.zeros(out),
        }
        return cls(num_classes, config, params, vocabulary_hash)

    def _check_shapes(self):
        C, S = self.num_classes, self.config.rows
        maps1, maps2 = self.config.conv_channels
        hidden = self.params.get("hidden.W", np.empty((0, 0))).shape[0]
        expected = {
            "conv1.kernels": (maps1, C, KERNEL_WIDTH),
            "conv2.kernels": (maps2, maps1, KERNEL_WIDTH),
            "hidden.W": (hidden, self.flat_size(self.config)),
            "output.W": (S * C, hidden),
        }
        for name, shape in expected.items():
            got = self.params[name].shape if name in self.params else None
            if got != shape:
                raise InputError(f"CNN parameter {name} has shape {got}, expected {shape}")

    def parameter_count(self) -> int:
        return parameter_count(self.params)

    def _forward(self, X: np.ndarray) -> Tuple[np.ndarray, _ForwardCache]:
        p = self.params
        S, C = self.config.rows, self.num_classes
        if X.ndim != 3 or X.shape[1:] != (S, C):
            raise InputError(f"CNN input must have shape (B, {S}, {C}), got {X.shape}")
        batch = X.shape[0]
        pre1, windows1 = conv1d_forward_cached(X, self.conv1)
        pooled1, idx1 = maxpool_rows_cached(relu(pre1))
        pre2, windows2 = conv1d_forward_cached(pooled1, self.conv2)
        pooled2, idx2 = maxpool_rows_cached(relu(pre2))
        flat = pooled2.reshape(batch, -1)
        hidden_pre = dense_forward(flat, p["hidden.W"], p["hidden.b"])
        hidden = relu(hidden_pre)
        logits = dense_forward(hidden, p["output.W"], p["output.b"]).reshape(batch, S, C)
        if self.config.loss == LOSS_SQUARED:
            Y, norms = l2_normalize_cached(logits)
        else:
            Y, norms = softmax(logits, axis=-1), None
        cache = _ForwardCache(
            windows1, pre1, idx1, windows2, pre2, idx2,
            pooled2.shape, flat, hidden_pre, hidden, norms,
        )
        return Y, cache

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=np.float64))[0]

    def loss_and_grads(self, X: np.ndarray, Y_gt: np.ndarray) -> Tuple[float, Params]:
        """Mean batch loss and its gradient with respect to every parameter."""
        p = self.params
        X = np.asarray(X, dtype=np.float64)
        Y_gt = np.asarray(Y_gt, dtype=np.float64)
        Y, cache = self._forward(X)
        batch = X.shape[0]
        S, C = self.config.rows, self.num_classes
        loss = cnn_loss(Y, Y_gt, self.config.loss)

        if self.config.loss == LOSS_SQUARED:
            dY = 2.0 * (Y - Y_gt) / (S * C * batch)
            d_logits = l2_normalize_backward(dY, Y, cache.norms)
        else:
            labels = np.argmax(Y_gt, axis=-1)
            onehot = np.zeros_like(Y)
            np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
            picked = np.take_along_axis(Y, labels[..., None], axis=-1)
            d_logits = np.where(picked >= PROB_FLOOR, Y - onehot, 0.0) / (S * batch)

        grads = {}
        d_hidden, grads["output.W"], grads["output.b"] = dense_backward(
            d_logits.reshape(batch, -1), cache.hidden, p["output.W"]
        )
        d_flat, grads["hidden.W"], grads["hidden.b"] = dense_backward(
            relu_backward(d_hidden, cache.hidden_pre), cache.flat, p["hidden.W"]
        )
        d_pooled2 = d_flat.reshape(cache.pooled2_shape)
        d_pre2 = relu_backward(
            maxpool_backward(d_pooled2, cache.pool_idx2, cache.pre2.shape[1]), cache.pre2
        )
        d_pooled1, grads["conv2.kernels"], grads["conv2.biases"] = conv1d_backward(
            d_pre2, cache.windows2, self.conv2
        )
        d_pre1 = relu_backward(
            maxpool_backward(d_pooled1, cache.pool_idx1, cache.pre1.shape[1]), cache.pre1
        )
        _, grads["conv1.kernels"], grads["conv1.biases"] = conv1d_backward(
            d_pre1, cache.windows1, self.conv1
        )
        return loss, grads

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            architecture=ARCHITECTURE,
            config=self.config.to_dict(),
            vocabulary_hash=self.vocabulary_hash,
            params=self.params,
            extra={"num_classes": self.num_classes},
        )

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "CnnModel":
        if checkpoint.architecture != ARCHITECTURE:
            raise InputError(f"Not a CNN checkpoint: {checkpoint.architecture}")
        return cls(
            num_classes=int(checkpoint.extra["num_classes"]),
            config=CnnConfig.from_dict(checkpoint.config),
            params=checkpoint.params,
            vocabulary_hash=checkpoint.vocabulary_hash,
        )


def cnn_forward(model: CnnModel, X: MatrixLike) -> SegmentMatrix:
    values = _values(X)
    return SegmentMatrix(model.forward_batch(values[None])[0])


@dataclass
class CnnTrainingResult:
    model: CnnModel
    losses: List[float] = field(default_factory=list)


def train_cnn(
    videos: Sequence[FrameTimeline],
    num_classes: int,
    config: CnnConfig,
    vocabulary_hash: str = "",
) -> CnnTrainingResult:
    """
    Train with mini-batch Adam on four (observation, next-50%) pairs per video.

    Args:
        videos: ground-truth training timelines
        num_classes: vocabulary size
        config: architecture and optimization settings; ``config.seed``
            fixes initialization and batch order
        vocabulary_hash: stored with the model for checkpoint pairing

    Returns:
        CnnTrainingResult with the model and the mean loss of every epoch
    """
    if not videos:
        raise InputError("CNN training needs at least one video")
    rng = np.random.default_rng(config.seed)
    model = CnnModel.init(num_classes, config, rng, vocabulary_hash)
    short = [len(v) for v in videos if short_span_message(config.rows, len(v) // 2)]
    if short:
        logger.warning(
            f"{len(short)} of {len(videos)} training videos are shorter than {2 * config.rows} "
            f"frames; their targets cannot be decoded at {config.rows} rows"
        )
    X_all, Y_all = [], []
    for video in videos:
        for X, Y in make_cnn_examples(video, config.rows, num_classes):
            X_all.append(X.values.astype(np.uint8))
            Y_all.append(Y.values.astype(np.uint8))
    X_all, Y_all = np.stack(X_all), np.stack(Y_all)
    logger.info(
        f"Training CNN: {len(X_all)} examples, {model.parameter_count()} parameters, "
        f"loss {config.loss}"
    )

    state = AdamState.for_params(model.params, lr=config.learning_rate)
    result = CnnTrainingResult(model)
    for epoch in range(config.epochs):
        order = rng.permutation(len(X_all))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = model.loss_and_grads(X_all[batch], Y_all[batch])
            if not math.isfinite(loss):
                raise NumericalError(f"Non-finite CNN loss {loss} at epoch {epoch + 1}")
            adam_step(model.params, grads, state)
            total += loss * len(batch)
        mean_loss = total / len(order)
        result.losses.append(mean_loss)
        logger.info(f"CNN epoch {epoch + 1}/{config.epochs}: loss {mean_loss:.6f}")
    return result


def short_span_message(rows: int, span_frames: int) -> Optional[str]:
    """Describe the collapse of a ``span_frames`` decode of ``rows`` rows, or None if it fits."""
    if span_frames >= rows:
        return None
    return (
        f"{span_frames}-frame span is shorter than the {rows} matrix rows; every frame "
        f"decodes from the last row, use a preset with at most {span_frames} rows"
    )


def cnn_predict_future(
    model: CnnModel,
    observed: SegmentSequence,
    requested_frames: int,
    full_frames: int,
    warn: bool = True,
) -> FrameTimeline:
    """Predict the trained 50% span in one pass and keep its first ``requested_frames``.

    A ``full_frames`` span shorter than the matrix rows decodes to a single
    segment; this is logged as a warning unless ``warn`` is False.
    """
    if requested_frames < 1:
        raise InputError(f"Requested span must be at least one frame, got {requested_frames}")
    if requested_frames > full_frames:
        raise InputError(
            f"Requested {requested_frames} frames, the model predicts only {full_frames}"
        )
    message = short_span_message(model.config.rows, full_frames)
    if message and warn:
        logger.warning(message)
    X = encode_matrix(observed, model.config.rows, model.num_classes)
    Y = cnn_forward(model, X)
    if model.config.sigma:
        Y = smooth_output(Y, model.config.sigma)
    return decode_matrix(Y, full_frames)[:requested_frames]


def dump_matrix_csv(matrix: MatrixLike, path, vocabulary: Optional[LabelVocabulary] = None) -> None:
    values = _values(matrix)
    columns = list(vocabulary.names) if vocabulary else [f"c{i}" for i in range(values.shape[1])]
    frame = pd.DataFrame(values, columns=columns)
    frame.index.name = "row"
    frame.to_csv(path, float_format="%.6f")


class CnnForecaster:
    """Adapts a trained CnnModel to the frame-level predictor interface."""

    name = "cnn"

    def __init__(self, model: CnnModel):
        self.model = model
        self.short_spans = 0

    def predict(
        self, observed: FrameTimeline, video_length: int, horizon_frames: int, rng=None
    ) -> FrameTimeline:
        full = frames_for_fraction(FUTURE_FRACTION, video_length)
        # logged once per forecaster
        first = self.short_spans == 0
        if short_span_message(self.model.config.rows, full):
            self.short_spans += 1
        return cnn_predict_future(
            self.model, segments_from_frames(observed), horizon_frames, full, warn=first
        )

"""Recursive segment forecaster.

Observed segments are fed to a dense -> GRU -> GRU stack as
(normalized length, 1-hot label) tokens. From the final hidden state three
heads predict the remaining length of the ongoing segment, the length of the
next segment and the label of the next segment. Predictions are appended to
the input and the network is run again until the requested horizon is filled.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import Checkpoint
from .data import mean_segment_count
from .exceptions import ForecastIncomplete, InputError, NumericalError
from .nn import (
    AdamState,
    GruLayerParams,
    Params,
    adam_step,
    dense_backward,
    dense_forward,
    glorot_uniform,
    gru_cell_backward,
    gru_cell_forward,
    parameter_count,
    relu,
    relu_backward,
    softmax,
)
from .timeline import (
    FrameTimeline,
    SegmentSequence,
    forward_fill,
    frames_from_segments,
    segments_from_frames,
)

logger = logging.getLogger(__name__)

ARCHITECTURE = "rnn-v1"
PROB_FLOOR = 1e-12
ITERATION_FACTOR = 4


@dataclass
class RnnConfig:
    hidden_size: int = 256
    embed_size: int = 256
    learning_rate: float = 1e-3
    epochs: int = 20
    seed: int = 0
    # average number of actions per video; estimated from the training videos when unset
    scale: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RnnConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"Unknown RNN config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class RnnToken:
    normalized_length: float
    label_onehot: Tuple[float, ...]

    def __post_init__(self):
        if not self.normalized_length > 0:
            raise InputError(f"Token length must be positive, got {self.normalized_length}")
        ones = sum(1 for v in self.label_onehot if v == 1)
        zeros = sum(1 for v in self.label_onehot if v == 0)
        if ones != 1 or ones + zeros != len(self.label_onehot):
            raise InputError("Token label must be a 1-hot vector")

    @classmethod
    def make(cls, normalized_length: float, label: int, num_classes: int) -> "RnnToken":
        onehot = [0.0] * num_classes
        onehot[label] = 1.0
        return cls(float(normalized_length), tuple(onehot))

    @property
    def label(self) -> int:
        return self.label_onehot.index(1)

    def vector(self) -> np.ndarray:
        return np.array((self.normalized_length,) + self.label_onehot, dtype=np.float64)


@dataclass(frozen=True)
class RnnTarget:
    remaining_length: float
    next_length: float
    next_label: int

    def __post_init__(self):
        if self.remaining_length < 0:
            raise InputError(f"Remaining length must be >= 0, got {self.remaining_length}")
        if not self.next_length > 0:
            raise InputError(f"Next length must be positive, got {self.next_length}")


@dataclass(frozen=True)
class RnnPrediction:
    remaining_length: float
    next_length: float
    probabilities: np.ndarray

    @property
    def next_label(self) -> int:
        return int(np.argmax(self.probabilities))


TokenInput = Union[Sequence[RnnToken], np.ndarray]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _token_matrix(
    pairs: Iterable[Tuple[int, int]], video_length: int, scale: float, num_classes: int
) -> np.ndarray:
    pairs = list(pairs)
    tokens = np.zeros((len(pairs), num_classes + 1))
    for i, (label, length) in enumerate(pairs):
        tokens[i, 0] = scale * length / video_length
        tokens[i, 1 + label] = 1.0
    return tokens


def encode_tokens(
    observed: SegmentSequence, video_length: int, scale: float, num_classes: int
) -> List[RnnToken]:
    """One token per segment, length normalized as scale * length / video_length."""
    if video_length <= 0:
        raise InputError(f"Video length must be positive, got {video_length}")
    if scale <= 0:
        raise InputError(f"Length scale must be positive, got {scale}")
    return [
        RnnToken.make(scale * seg.length / video_length, seg.label, num_classes)
        for seg in observed
    ]


def _interior_split(rng, length: int) -> int:
    """Frames kept before a random cut strictly inside a segment (1-frame segments keep 1)."""
    if length < 2:
        return length
    return int(rng.integers(1, length))


def make_rnn_examples(
    gt: SegmentSequence, video_length: int, scale: float, rng, num_classes: int
) -> List[Tuple[List[RnnToken], RnnTarget]]:
    """
    Cut a ground-truth segmentation into n - 1 (tokens, target) examples.

    For segment i < n the cut falls strictly inside segment i; the tokens
    cover segments 1..i with segment i truncated at the cut. The target holds
    the frames of segment i after the cut, the frames of segment i + 1 up to a
    second cut inside it, and the label of segment i + 1.
    """
    examples = []
    if video_length <= 0 or scale <= 0:
        raise InputError("Video length and scale must be positive")
    norm = scale / video_length
    for i in range(len(gt) - 1):
        current, following = gt[i], gt[i + 1]
        kept = _interior_split(rng, current.length)
        partial_next = _interior_split(rng, following.length)
        pairs = [(seg.label, seg.length) for seg in gt.segments[:i]] + [(current.label, kept)]
        tokens = [RnnToken.make(norm * length, label, num_classes) for label, length in pairs]
        target = RnnTarget(
            remaining_length=norm * (current.length - kept),
            next_length=norm * partial_next,
            next_label=following.label,
        )
        examples.append((tokens, target))
    return examples


def rnn_loss(pred: RnnPrediction, target: RnnTarget) -> float:
    """-log p_c + (l_r - l_r_hat)^2 + (l_n - l_n_hat)^2 with p_c clamped at 1e-12."""
    p_c = max(float(pred.probabilities[target.next_label]), PROB_FLOOR)
    return (
        -math.log(p_c)
        + (target.remaining_length - pred.remaining_length) ** 2
        + (target.next_length - pred.next_length) ** 2
    )


@dataclass
class _ForwardCache:
    tokens: np.ndarray
    steps: list
    hidden: np.ndarray
    pre_remaining: np.ndarray
    pre_next: np.ndarray
    probabilities: np.ndarray


class RnnModel:
    """Dense input layer, two stacked GRU layers and three output heads."""

    def __init__(
        self,
        num_classes: int,
        config: RnnConfig,
        params: Params,
        scale: float,
        segments_per_video: Optional[float] = None,
        vocabulary_hash: str = "",
    ):
        self.num_classes = num_classes
        self.config = config
        self.params = params
        self.scale = float(scale)
        self.segments_per_video = float(segments_per_video or scale)
        self.vocabulary_hash = vocabulary_hash
        self._check_shapes()
        self.gru1 = GruLayerParams.from_params(params, "gru1.")
        self.gru2 = GruLayerParams.from_params(params, "gru2.")

    @classmethod
    def init(
        cls,
        num_classes: int,
        config: RnnConfig,
        scale: float,
        rng: np.random.Generator,
        segments_per_video: Optional[float] = None,
        vocabulary_hash: str = "",
    ) -> "RnnModel":
        token_size = num_classes + 1
        E, H = config.embed_size, config.hidden_size
        params = {
            "input.W": glorot_uniform(rng, (E, token_size), token_size, E),
            "input.b": np.zeros(E),
        }
        params.update(GruLayerParams.init(E, H, rng).to_params("gru1."))
        params.update(GruLayerParams.init(H, H, rng).to_params("gru2."))
        params["remaining.W"] = glorot_uniform(rng, (1, H), H, 1)
        params["remaining.b"] = np.zeros(1)
        params["next_length.W"] = glorot_uniform(rng, (1, H), H, 1)
        params["next_length.b"] = np.zeros(1)
        params["label.W"] = glorot_uniform(rng, (num_classes, H), H, num_classes)
        params["label.b"] = np.zeros(num_classes)
        return cls(num_classes, config, params, scale, segments_per_video, vocabulary_hash)

    def _check_shapes(self):
        H, E, C = self.config.hidden_size, self.config.embed_size, self.num_classes
        expected = {
            "input.W": (E, C + 1),
            "remaining.W": (1, H),
            "next_length.W": (1, H),
            "label.W": (C, H),
        }
        for name, shape in expected.items():
            if name not in self.params or self.params[name].shape != shape:
                got = self.params[name].shape if name in self.params else None
                raise InputError(f"RNN parameter {name} has shape {got}, expected {shape}")

    def parameter_count(self) -> int:
        return parameter_count(self.params)

    def _as_matrix(self, tokens: TokenInput) -> np.ndarray:
        if isinstance(tokens, np.ndarray):
            matrix = tokens
        else:
            matrix = np.array([token.vector() for token in tokens])
        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise InputError("RNN input needs at least one token")
        if matrix.shape[1] != self.num_classes + 1:
            raise InputError(
                f"Token dimension {matrix.shape[1]} does not match {self.num_classes} classes + 1"
            )
        return matrix

    def _forward(self, tokens: TokenInput) -> Tuple[RnnPrediction, _ForwardCache]:
        p = self.params
        matrix = self._as_matrix(tokens)
        h1 = np.zeros(self.config.hidden_size)
        h2 = np.zeros(self.config.hidden_size)
        steps = []
        for x in matrix:
            e = dense_forward(x, p["input.W"], p["input.b"])
            h1, cache1 = gru_cell_forward(e, h1, self.gru1)
            h2, cache2 = gru_cell_forward(h1, h2, self.gru2)
            steps.append((x, cache1, cache2))
        pre_remaining = dense_forward(h2, p["remaining.W"], p["remaining.b"])
        pre_next = dense_forward(h2, p["next_length.W"], p["next_length.b"])
        probabilities = softmax(dense_forward(h2, p["label.W"], p["label.b"]))
        prediction = RnnPrediction(
            remaining_length=float(relu(pre_remaining)[0]),
            next_length=float(relu(pre_next)[0]),
            probabilities=probabilities,
        )
        return prediction, _ForwardCache(
            matrix, steps, h2, pre_remaining, pre_next, probabilities
        )

    def forward(self, tokens: TokenInput) -> RnnPrediction:
        return self._forward(tokens)[0]

    def loss_and_grads(self, tokens: TokenInput, target: RnnTarget) -> Tuple[float, Params]:
        """Loss of one example and its gradient by backpropagation through time."""
        p = self.params
        prediction, cache = self._forward(tokens)
        loss = rnn_loss(prediction, target)
        grads = {name: np.zeros_like(value) for name, value in p.items()}

        d_remaining = relu_backward(
            np.array([-2.0 * (target.remaining_length - prediction.remaining_length)]),
            cache.pre_remaining,
        )
        d_next = relu_backward(
            np.array([-2.0 * (target.next_length - prediction.next_length)]), cache.pre_next
        )
        d_logits = cache.probabilities.copy()
        if cache.probabilities[target.next_label] >= PROB_FLOOR:
            d_logits[target.next_label] -= 1.0
        else:
            d_logits[:] = 0.0

        dh2 = np.zeros(self.config.hidden_size)
        heads = (("remaining", d_remaining), ("next_length", d_next), ("label", d_logits))
        for head, d_out in heads:
            dh, dW, db = dense_backward(d_out, cache.hidden, p[f"{head}.W"])
            dh2 += dh
            grads[f"{head}.W"] += dW
            grads[f"{head}.b"] += db

        dh1 = np.zeros(self.config.hidden_size)
        for x, cache1, cache2 in reversed(cache.steps):
            d_h1_from_top, dh2, g2 = gru_cell_backward(dh2, cache2, self.gru2)
            de, dh1, g1 = gru_cell_backward(dh1 + d_h1_from_top, cache1, self.gru1)
            _, dW, db = dense_backward(de, x, p["input.W"])
            grads["input.W"] += dW
            grads["input.b"] += db
            for name, g in g1.items():
                grads["gru1." + name] += g
            for name, g in g2.items():
                grads["gru2." + name] += g
        return loss, grads

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            architecture=ARCHITECTURE,
            config=self.config.to_dict(),
            vocabulary_hash=self.vocabulary_hash,
            params=self.params,
            extra={
                "num_classes": self.num_classes,
                "scale": self.scale,
                "segments_per_video": self.segments_per_video,
            },
        )

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "RnnModel":
        if checkpoint.architecture != ARCHITECTURE:
            raise InputError(f"Not an RNN checkpoint: {checkpoint.architecture}")
        extra = checkpoint.extra
        return cls(
            num_classes=int(extra["num_classes"]),
            config=RnnConfig.from_dict(checkpoint.config),
            params=checkpoint.params,
            scale=extra["scale"],
            segments_per_video=extra.get("segments_per_video"),
            vocabulary_hash=checkpoint.vocabulary_hash,
        )


@dataclass
class RnnTrainingResult:
    model: RnnModel
    losses: List[float] = field(default_factory=list)


def train_rnn(
    videos: Sequence[FrameTimeline],
    num_classes: int,
    config: RnnConfig,
    vocabulary_hash: str = "",
    resample_splits: bool = True,
) -> RnnTrainingResult:
    """
    Train the forecaster with Adam on single-example updates.

    Args:
        videos: ground-truth training timelines
        num_classes: vocabulary size
        config: architecture and optimization settings; ``config.seed``
            fixes initialization, split points and shuffling
        vocabulary_hash: stored with the model for checkpoint pairing
        resample_splits: draw fresh split points every epoch; when False the
            examples drawn before the first epoch are reused

    Returns:
        RnnTrainingResult with the model and the mean loss of every epoch
    """
    if not videos:
        raise InputError("RNN training needs at least one video")
    rng = np.random.default_rng(config.seed)
    segments_per_video = mean_segment_count(videos)
    scale = config.scale if config.scale else segments_per_video
    model = RnnModel.init(num_classes, config, scale, rng, segments_per_video, vocabulary_hash)
    logger.info(
        f"Training RNN: {len(videos)} videos, {model.parameter_count()} parameters, "
        f"scale {scale:.3f}"
    )
    sequences = [(segments_from_frames(video), len(video)) for video in videos]

    def draw_examples():
        examples = []
        for seq, length in sequences:
            examples.extend(make_rnn_examples(seq, length, scale, rng, num_classes))
        return examples

    fixed = None if resample_splits else draw_examples()
    if fixed is not None and not fixed:
        raise InputError("No RNN training examples: every video has a single segment")

    state = AdamState.for_params(model.params, lr=config.learning_rate)
    result = RnnTrainingResult(model)
    for epoch in range(config.epochs):
        examples = fixed if fixed is not None else draw_examples()
        if not examples:
            raise InputError("No RNN training examples: every video has a single segment")
        total = 0.0
        for k in rng.permutation(len(examples)):
            tokens, target = examples[k]
            loss, grads = model.loss_and_grads(tokens, target)
            if not math.isfinite(loss):
                raise NumericalError(
                    f"Non-finite RNN loss {loss} at epoch {epoch + 1}, example {int(k)}"
                )
            adam_step(model.params, grads, state)
            total += loss
        mean_loss = total / len(examples)
        result.losses.append(mean_loss)
        logger.info(f"RNN epoch {epoch + 1}/{config.epochs}: loss {mean_loss:.6f}")
    return result


def rnn_predict_future(
    model: RnnModel, observed: SegmentSequence, video_length: int, horizon_frames: int
) -> SegmentSequence:
    """
    Forecast ``horizon_frames`` future frames by feeding predictions back in.

    Each pass extends the last segment by the predicted remaining length and
    appends the predicted next segment. Remaining lengths round to >= 0
    frames, new segments to >= 1 frame.

    Raises:
        ForecastIncomplete: the horizon was not filled within
            4 x (average segments per video) passes; ``partial`` holds the
            future predicted so far
    """
    if horizon_frames < 1:
        raise InputError(f"Horizon must be at least one frame, got {horizon_frames}")
    if video_length <= 0:
        raise InputError(f"Video length must be positive, got {video_length}")
    to_frames = video_length / model.scale
    pairs = [[seg.label, seg.length] for seg in observed]
    num_observed = len(pairs)
    observed_tail = pairs[-1][1]
    produced = 0
    max_passes = max(1, int(math.ceil(ITERATION_FACTOR * model.segments_per_video)))

    def future() -> Optional[SegmentSequence]:
        tail = [(pairs[num_observed - 1][0], pairs[num_observed - 1][1] - observed_tail)]
        tail.extend((label, length) for label, length in pairs[num_observed:])
        if sum(length for _, length in tail) == 0:
            return None
        return SegmentSequence.merged(tail)

    for _ in range(max_passes):
        tokens = _token_matrix(pairs, video_length, model.scale, model.num_classes)
        prediction = model.forward(tokens)
        extension = max(0, _round_half_up(prediction.remaining_length * to_frames))
        pairs[-1][1] += extension
        produced += extension
        if produced >= horizon_frames:
            break
        length = max(1, _round_half_up(prediction.next_length * to_frames))
        pairs.append([prediction.next_label, length])
        produced += length
        if produced >= horizon_frames:
            break
    else:
        raise ForecastIncomplete(
            f"RNN filled {produced} of {horizon_frames} frames in {max_passes} passes",
            partial=future(),
        )
    return future().truncate(horizon_frames)


class RnnForecaster:
    """Adapts a trained RnnModel to the frame-level predictor interface."""

    name = "rnn"

    def __init__(self, model: RnnModel):
        self.model = model

    def predict(
        self, observed: FrameTimeline, video_length: int, horizon_frames: int, rng=None
    ) -> FrameTimeline:
        try:
            seq = rnn_predict_future(
                self.model, segments_from_frames(observed), video_length, horizon_frames
            )
        except ForecastIncomplete as e:
            logger.warning(f"{e}; forward-filling the rest")
            if e.partial is None:
                return forward_fill([observed[len(observed) - 1]], horizon_frames)
            return forward_fill(frames_from_segments(e.partial).frames, horizon_frames)
        return frames_from_segments(seq)

"""Training-free reference predictors: a finite sequence grammar with mean
class lengths, and nearest-neighbour retrieval on the observed frames."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InputError
from .timeline import FrameTimeline, SegmentSequence, forward_fill, segments_from_frames

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SequenceGrammar:
    """Distinct training label sequences (first-seen order) and per-class mean lengths."""

    sequences: Tuple[Tuple[int, ...], ...]
    mean_lengths: Dict[int, int]

    def __post_init__(self):
        if not self.sequences:
            raise InputError("Grammar needs at least one sequence")
        for label, length in self.mean_lengths.items():
            if length < 1:
                raise InputError(f"Mean length of class {label} must be >= 1, got {length}")

    def mean_length(self, label: int) -> int:
        # classes never seen in training contribute no frames
        return self.mean_lengths.get(label, 0)

    def candidates(self, observed_labels: Sequence[int]) -> List[Tuple[int, ...]]:
        """Sequences starting with ``observed_labels``, else those sharing the longest prefix."""
        observed = tuple(observed_labels)
        matches = [s for s in self.sequences if s[: len(observed)] == observed]
        if matches:
            return matches
        shared = [_common_prefix(s, observed) for s in self.sequences]
        best = max(shared)
        return [s for s, n in zip(self.sequences, shared) if n == best]


def _common_prefix(a: Sequence[int], b: Sequence[int]) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


def build_grammar(train: Sequence[SegmentSequence]) -> SequenceGrammar:
    """
    Collect the distinct label sequences and mean class lengths of a training set.

    Means are averaged over every training segment of the class and rounded
    half up to whole frames, minimum 1.
    """
    if not train:
        raise InputError("Grammar needs at least one training sequence")
    sequences: Dict[Tuple[int, ...], None] = {}
    totals: Dict[int, List[int]] = {}
    for seq in train:
        sequences.setdefault(seq.labels, None)
        for seg in seq:
            totals.setdefault(seg.label, []).append(seg.length)
    mean_lengths = {
        label: max(1, int(math.floor(np.mean(lengths) + 0.5)))
        for label, lengths in sorted(totals.items())
    }
    logger.debug(f"Grammar with {len(sequences)} sequences over {len(mean_lengths)} classes")
    return SequenceGrammar(tuple(sequences), mean_lengths)


def grammar_predict(
    grammar: SequenceGrammar,
    observed: SegmentSequence,
    horizon_frames: int,
    rng: np.random.Generator,
) -> FrameTimeline:
    """
    Complete the observed actions with a random matching grammar sequence.

    Args:
        grammar: sequences and mean lengths from build_grammar
        observed: segments of the observed frames; the last one is ongoing
        horizon_frames: number of future frames to produce
        rng: source of the uniform choice among candidate sequences

    Returns:
        exactly ``horizon_frames`` future labels
    """
    if horizon_frames < 1:
        raise InputError(f"Horizon must be at least one frame, got {horizon_frames}")
    candidates = grammar.candidates(observed.labels)
    chosen = candidates[int(rng.integers(len(candidates)))]

    ongoing = observed[len(observed) - 1]
    labels = [ongoing.label]
    lengths = [max(0, grammar.mean_length(ongoing.label) - ongoing.length)]
    for label in chosen[len(observed) :]:
        labels.append(label)
        lengths.append(grammar.mean_length(label))
    frames = np.repeat(np.array(labels), np.array(lengths))
    if frames.size == 0:
        frames = np.array([ongoing.label])
    return forward_fill(frames, horizon_frames)


def resample_nearest(frames: np.ndarray, length: int) -> np.ndarray:
    """Nearest-index resampling of a label array to ``length`` entries."""
    if length < 1:
        return frames[:0]
    idx = ((2 * np.arange(length) + 1) * frames.size) // (2 * length)
    return frames[idx]


def nearest_neighbor(
    train: Sequence[FrameTimeline], observed: FrameTimeline, video_length: int
) -> Tuple[int, float]:
    """Index and frame mismatch rate of the training video closest to ``observed``.

    Each candidate's prefix up to the same fraction of its own length is
    resampled to the observed length; ties go to the earliest candidate.
    """
    if not train:
        raise InputError("Nearest-neighbour retrieval needs at least one training video")
    t = len(observed)
    query = observed.frames
    distances = np.empty(len(train))
    for j, candidate in enumerate(train):
        boundary = max(1, t * len(candidate) // video_length)
        prefix = resample_nearest(candidate.frames[:boundary], t)
        distances[j] = np.mean(prefix != query)
    best = int(np.argmin(distances))
    return best, float(distances[best])


def nn_predict(
    train: Sequence[FrameTimeline],
    observed: FrameTimeline,
    video_length: int,
    horizon_frames: int,
) -> FrameTimeline:
    """
    Use the future of the nearest training video as the prediction.

    The neighbour's frames after its own observation boundary are resampled
    to the query's remaining length and the first ``horizon_frames`` kept.
    """
    if horizon_frames < 1:
        raise InputError(f"Horizon must be at least one frame, got {horizon_frames}")
    t = len(observed)
    if t >= video_length:
        raise InputError(f"Observed {t} frames of a {video_length}-frame video leaves no future")
    best, distance = nearest_neighbor(train, observed, video_length)
    neighbour = train[best].frames
    boundary = max(1, t * neighbour.size // video_length)
    remainder = neighbour[boundary:]
    if remainder.size == 0:
        return forward_fill(neighbour[-1:], horizon_frames)
    future = resample_nearest(remainder, max(video_length - t, horizon_frames))
    logger.debug(f"Nearest neighbour {best} at distance {distance:.4f}")
    return FrameTimeline(future[:horizon_frames])


class GrammarForecaster:
    name = "grammar"

    def __init__(self, grammar: SequenceGrammar):
        self.grammar = grammar

    @classmethod
    def from_timelines(cls, videos: Sequence[FrameTimeline]) -> "GrammarForecaster":
        return cls(build_grammar([segments_from_frames(v) for v in videos]))

    def predict(
        self,
        observed: FrameTimeline,
        video_length: int,
        horizon_frames: int,
        rng: Optional[np.random.Generator] = None,
    ) -> FrameTimeline:
        if rng is None:
            rng = np.random.default_rng(0)
        return grammar_predict(self.grammar, segments_from_frames(observed), horizon_frames, rng)


class NearestNeighborForecaster:
    name = "nn-baseline"

    def __init__(self, train: Sequence[FrameTimeline]):
        if not train:
            raise InputError("Nearest-neighbour baseline needs at least one training video")
        self.train = tuple(train)

    def predict(
        self, observed: FrameTimeline, video_length: int, horizon_frames: int, rng=None
    ) -> FrameTimeline:
        return nn_predict(self.train, observed, video_length, horizon_frames)

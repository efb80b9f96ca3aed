"""Frame-wise labelings, segment sequences and observation splitting.

Every type in this module is an immutable value: timelines wrap a read-only
numpy array and segment sequences are tuples of frozen dataclasses.
"""

import hashlib
import math
from dataclasses import dataclass
from itertools import groupby
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InputError

# Guards floor(fraction * T) against products like 0.29 * 100 = 28.999999999999996.
_FRACTION_EPS = 1e-9


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered class names; the index of a class is its position."""

    names: Tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise InputError("Vocabulary must contain at least one class")
        seen = set()
        for name in names:
            if not name or name != name.strip():
                raise InputError(f"Invalid class name in vocabulary: {name!r}")
            if name in seen:
                raise InputError(f"Duplicate class name in vocabulary: {name}")
            seen.add(name)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_lookup", {name: i for i, name in enumerate(names)})

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._lookup

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise KeyError(f"Unknown class name: {name}") from None

    def name(self, index: int) -> str:
        return self.names[index]

    def digest(self) -> str:
        """SHA-256 of the newline-joined class names, used to pair checkpoints with corpora."""
        return hashlib.sha256("\n".join(self.names).encode("utf8")).hexdigest()


class FrameTimeline:
    """Per-frame class indices of one video."""

    __slots__ = ("_frames",)

    def __init__(self, frames: Iterable[int], num_classes: Optional[int] = None):
        arr = np.array(list(frames) if not isinstance(frames, np.ndarray) else frames)
        if arr.ndim != 1:
            raise InputError(f"Timeline must be one-dimensional, got shape {arr.shape}")
        if arr.size == 0:
            raise InputError("Timeline must contain at least one frame")
        if not np.issubdtype(arr.dtype, np.integer):
            raise InputError(f"Timeline labels must be integers, got {arr.dtype}")
        arr = arr.astype(np.int64)
        if arr.min() < 0:
            raise InputError("Timeline contains a negative class index")
        if num_classes is not None and arr.max() >= num_classes:
            raise InputError(
                f"Timeline contains class index {int(arr.max())} outside [0, {num_classes})"
            )
        arr.setflags(write=False)
        self._frames = arr

    @property
    def frames(self) -> np.ndarray:
        return self._frames

    def __len__(self):
        return int(self._frames.size)

    def __iter__(self) -> Iterator[int]:
        return (int(x) for x in self._frames)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return FrameTimeline(self._frames[index])
        return int(self._frames[index])

    def __eq__(self, other):
        if not isinstance(other, FrameTimeline):
            return NotImplemented
        return np.array_equal(self._frames, other._frames)

    def __hash__(self):
        return hash(self._frames.tobytes())

    def __repr__(self):
        preview = self.tolist()[:12]
        suffix = ", ..." if len(self) > 12 else ""
        return f"FrameTimeline({preview}{suffix} len={len(self)})"

    def tolist(self) -> List[int]:
        return [int(x) for x in self._frames]

    def concat(self, other: "FrameTimeline") -> "FrameTimeline":
        return FrameTimeline(np.concatenate([self._frames, other._frames]))

    def max_label(self) -> int:
        return int(self._frames.max())


@dataclass(frozen=True)
class Segment:
    label: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise InputError(f"Segment length must be >= 1, got {self.length}")
        if self.label < 0:
            raise InputError(f"Segment label must be >= 0, got {self.label}")


@dataclass(frozen=True)
class SegmentSequence:
    """Run-length view of a timeline: maximal runs in temporal order."""

    segments: Tuple[Segment, ...]

    def __post_init__(self):
        segments = tuple(self.segments)
        if not segments:
            raise InputError("Segment sequence must contain at least one segment")
        for prev, cur in zip(segments, segments[1:]):
            if prev.label == cur.label:
                raise InputError(
                    f"Adjacent segments share label {cur.label}; segments must be maximal runs"
                )
        object.__setattr__(self, "segments", segments)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[int, int]]) -> "SegmentSequence":
        return cls(tuple(Segment(int(label), int(length)) for label, length in pairs))

    @classmethod
    def merged(cls, pairs: Iterable[Tuple[int, int]]) -> "SegmentSequence":
        """Build a sequence from (label, length) pairs; equal neighbours merge, empty runs drop."""
        merged: List[List[int]] = []
        for label, length in pairs:
            if length <= 0:
                continue
            if merged and merged[-1][0] == label:
                merged[-1][1] += int(length)
            else:
                merged.append([int(label), int(length)])
        return cls.from_pairs(merged)

    @property
    def video_length(self) -> int:
        return sum(seg.length for seg in self.segments)

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(seg.label for seg in self.segments)

    @property
    def lengths(self) -> Tuple[int, ...]:
        return tuple(seg.length for seg in self.segments)

    def __len__(self):
        return len(self.segments)

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __getitem__(self, index):
        return self.segments[index]

    def intervals(self) -> List[Tuple[int, int, int]]:
        """(label, start, end) per segment, end exclusive."""
        out = []
        start = 0
        for seg in self.segments:
            out.append((seg.label, start, start + seg.length))
            start += seg.length
        return out

    def truncate(self, frames: int) -> "SegmentSequence":
        if frames < 1 or frames > self.video_length:
            raise InputError(
                f"Cannot truncate a {self.video_length}-frame sequence to {frames} frames"
            )
        pairs = []
        remaining = frames
        for seg in self.segments:
            take = min(seg.length, remaining)
            pairs.append((seg.label, take))
            remaining -= take
            if remaining == 0:
                break
        return SegmentSequence.from_pairs(pairs)


@dataclass(frozen=True)
class ObservationSplit:
    observe_fraction: float
    predict_fraction: float = 0.0

    def __post_init__(self):
        alpha, beta = self.observe_fraction, self.predict_fraction
        if not 0.0 < alpha < 1.0:
            raise InputError(f"Observation fraction must lie in (0, 1), got {alpha}")
        if beta and not 0.0 < beta <= 1.0:
            raise InputError(f"Prediction fraction must lie in (0, 1], got {beta}")
        if alpha + beta > 1.0 + _FRACTION_EPS:
            raise InputError(
                f"Observation {alpha} plus prediction {beta} exceeds the whole video"
            )

    def observed_frames(self, video_length: int) -> int:
        return frames_for_fraction(self.observe_fraction, video_length)

    def predicted_frames(self, video_length: int) -> int:
        return frames_for_fraction(self.predict_fraction, video_length)


def frames_for_fraction(fraction: float, video_length: int) -> int:
    """floor(fraction * video_length)."""
    return int(math.floor(fraction * video_length + _FRACTION_EPS))


def segments_from_frames(timeline: FrameTimeline) -> SegmentSequence:
    return SegmentSequence.from_pairs(
        (label, sum(1 for _ in group)) for label, group in groupby(timeline)
    )


def frames_from_segments(seq: SegmentSequence) -> FrameTimeline:
    return FrameTimeline(np.repeat(np.array(seq.labels), np.array(seq.lengths)))


def split_observation(
    timeline: FrameTimeline, alpha: float, beta: Optional[float] = None
) -> Tuple[FrameTimeline, FrameTimeline]:
    """Cut a timeline into the observed prefix and the remaining future.

    Args:
        timeline: full ground-truth (or decoded) timeline
        alpha: observed fraction; the cut is at floor(alpha * T)
        beta: optional prediction fraction, only validated against alpha

    Returns:
        (observed, future) with observed + future == timeline
    """
    split = ObservationSplit(alpha, beta or 0.0)
    total = len(timeline)
    t = split.observed_frames(total)
    if t < 1:
        raise InputError(f"Observing {alpha} of {total} frames leaves nothing observed")
    if t >= total:
        raise InputError(f"Observing {alpha} of {total} frames leaves no future")
    return timeline[:t], timeline[t:]


def truncate_future(timeline: FrameTimeline, beta: float, video_length: int) -> FrameTimeline:
    """Keep the first floor(beta * T) frames of a predicted future."""
    if not 0.0 < beta <= 1.0:
        raise InputError(f"Prediction fraction must lie in (0, 1], got {beta}")
    span = frames_for_fraction(beta, video_length)
    if span < 1:
        raise InputError(f"Predicting {beta} of {video_length} frames is an empty span")
    if len(timeline) < span:
        raise InputError(
            f"Prediction has {len(timeline)} frames but {span} were requested"
        )
    return timeline[:span]


def forward_fill(timeline: Sequence[int], frames: int) -> FrameTimeline:
    """Cut or extend a labeling to exactly ``frames`` frames, repeating the last label."""
    arr = np.asarray(list(timeline) if not isinstance(timeline, np.ndarray) else timeline)
    if arr.size == 0:
        raise InputError("Cannot forward-fill an empty labeling")
    if arr.size >= frames:
        return FrameTimeline(arr[:frames])
    pad = np.full(frames - arr.size, arr[-1], dtype=arr.dtype)
    return FrameTimeline(np.concatenate([arr, pad]))

"""Corpus loading, dataset splits and synthetic activity-grammar corpora.

Label files hold one class name per line, one line per frame. Vocabulary files
hold one class name per line, or ``<index> <name>`` pairs as distributed with
Breakfast and 50Salads (``mapping.txt``). Lines starting with ``#`` are
comments everywhere.
"""

import asyncio
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import InputError
from .timeline import FrameTimeline, LabelVocabulary, segments_from_frames

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

_MAPPING_LINE = re.compile(r"^(\d+)\s+(\S+)$")


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    ground_truth: FrameTimeline
    decoded: Optional[FrameTimeline] = None


@dataclass(frozen=True)
class Corpus:
    vocabulary: LabelVocabulary
    videos: Tuple[VideoRecord, ...]

    def __post_init__(self):
        videos = tuple(self.videos)
        seen = set()
        num_classes = len(self.vocabulary)
        for video in videos:
            if video.video_id in seen:
                raise InputError(f"Duplicate video id: {video.video_id}")
            seen.add(video.video_id)
            if video.ground_truth.max_label() >= num_classes:
                raise InputError(f"Video {video.video_id} uses a label outside the vocabulary")
            if video.decoded is not None:
                if len(video.decoded) != len(video.ground_truth):
                    raise InputError(
                        f"Video {video.video_id}: decoded labels have {len(video.decoded)} "
                        f"frames, ground truth has {len(video.ground_truth)}"
                    )
                if video.decoded.max_label() >= num_classes:
                    raise InputError(
                        f"Video {video.video_id}: decoded labels outside the vocabulary"
                    )
        object.__setattr__(self, "videos", videos)
        object.__setattr__(self, "_by_id", {v.video_id: v for v in videos})

    def __len__(self):
        return len(self.videos)

    def __iter__(self) -> Iterator[VideoRecord]:
        return iter(self.videos)

    def __contains__(self, video_id):
        return video_id in self._by_id

    @property
    def ids(self) -> List[str]:
        return [v.video_id for v in self.videos]

    def get(self, video_id: str) -> VideoRecord:
        try:
            return self._by_id[video_id]
        except KeyError:
            raise InputError(f"Unknown video id: {video_id}") from None

    def select(self, video_ids: Iterable[str]) -> List[VideoRecord]:
        return [self.get(video_id) for video_id in video_ids]


@dataclass(frozen=True)
class SplitSpec:
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "train_ids", tuple(self.train_ids))
        object.__setattr__(self, "test_ids", tuple(self.test_ids))
        if not self.train_ids:
            raise InputError("Split leaves no training videos")
        if not self.test_ids:
            raise InputError("Split has no test videos")
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise InputError(f"Train and test ids overlap: {sorted(overlap)}")

    def validate(self, corpus: Corpus) -> None:
        for video_id in self.train_ids + self.test_ids:
            if video_id not in corpus:
                raise InputError(f"Split references unknown video id: {video_id}")


@dataclass(frozen=True)
class SyntheticGrammarSpec:
    """Stochastic activity grammar used to generate desk-scale corpora.

    ``lengths`` maps a class name to an inclusive (min, max) frame range drawn
    uniformly. ``transition_noise`` is the probability that a non-first
    segment is relabelled to a random class differing from its neighbours;
    ``decoded_flip_rate`` is the per-segment relabelling probability used to
    derive a noisy decoded timeline next to the ground truth.
    """

    vocabulary: LabelVocabulary
    sequences: Tuple[Tuple[str, ...], ...]
    weights: Tuple[float, ...]
    lengths: Dict[str, Tuple[int, int]]
    num_videos: int
    seed: int = 0
    transition_noise: float = 0.0
    decoded_flip_rate: float = 0.0

    def __post_init__(self):
        sequences = tuple(tuple(seq) for seq in self.sequences)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "sequences", sequences)
        object.__setattr__(self, "weights", weights)
        if not sequences:
            raise InputError("Grammar needs at least one sequence")
        if len(weights) != len(sequences):
            raise InputError("Grammar needs exactly one weight per sequence")
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise InputError("Sequence weights must be non-negative with a positive total")
        for seq in sequences:
            if not seq:
                raise InputError("Grammar sequences must be non-empty")
            for name in seq:
                if name not in self.vocabulary:
                    raise InputError(f"Grammar uses unknown class: {name}")
                if name not in self.lengths:
                    raise InputError(f"No length range given for class: {name}")
            for a, b in zip(seq, seq[1:]):
                if a == b:
                    raise InputError(f"Grammar sequence repeats {a} back to back")
        for name, (lo, hi) in self.lengths.items():
            if lo < 1 or lo > hi:
                raise InputError(f"Invalid length range for {name}: ({lo}, {hi})")
        if self.num_videos < 1:
            raise InputError("Grammar must generate at least one video")
        for rate_name in ("transition_noise", "decoded_flip_rate"):
            rate = getattr(self, rate_name)
            if not 0.0 <= rate <= 1.0:
                raise InputError(f"{rate_name} must lie in [0, 1], got {rate}")

    def to_dict(self) -> dict:
        return {
            "classes": list(self.vocabulary.names),
            "sequences": [
                {"labels": list(seq), "weight": w} for seq, w in zip(self.sequences, self.weights)
            ],
            "lengths": {name: [lo, hi] for name, (lo, hi) in sorted(self.lengths.items())},
            "videos": self.num_videos,
            "seed": self.seed,
            "transition_noise": self.transition_noise,
            "decoded_flip_rate": self.decoded_flip_rate,
        }


# breakfast-like activities; used by ``synth`` when no grammar file is given
DEMO_GRAMMAR = {
    "classes": [
        "take_cup",
        "pour_coffee",
        "pour_milk",
        "stir",
        "take_bowl",
        "pour_cereals",
        "butter_pan",
        "crack_egg",
        "fry_egg",
        "put_on_plate",
        "cut_bun",
        "smear_butter",
    ],
    "sequences": [
        {"labels": ["take_cup", "pour_coffee", "pour_milk", "stir"]},
        {"labels": ["take_bowl", "pour_cereals", "pour_milk", "stir", "take_cup"]},
        {"labels": ["butter_pan", "crack_egg", "fry_egg", "put_on_plate"]},
        {"labels": ["cut_bun", "smear_butter", "put_on_plate", "take_cup", "pour_coffee"]},
        {"labels": ["crack_egg", "stir", "butter_pan", "fry_egg", "put_on_plate", "take_cup"]},
    ],
    "lengths": {
        "take_cup": [20, 20],
        "pour_coffee": [40, 40],
        "pour_milk": [30, 30],
        "stir": [25, 25],
        "take_bowl": [15, 15],
        "pour_cereals": [35, 35],
        "butter_pan": [25, 25],
        "crack_egg": [20, 20],
        "fry_egg": [60, 60],
        "put_on_plate": [20, 20],
        "cut_bun": [30, 30],
        "smear_butter": [40, 40],
    },
    "videos": 250,
    "seed": 0,
}


def load_grammar_spec(spec_json) -> SyntheticGrammarSpec:
    """
    Build a SyntheticGrammarSpec from its JSON form.

    Args:
        spec_json: Dict or path to a JSON file with keys ``classes``,
            ``sequences`` (``labels`` + optional ``weight``), ``lengths``
            (class -> [min, max]) or ``default_length``, ``videos``,
            and optional ``seed``, ``transition_noise``, ``decoded_flip_rate``

    Returns:
        Validated SyntheticGrammarSpec
    """
    if isinstance(spec_json, (str, os.PathLike)):
        try:
            with open(spec_json, "r", encoding="utf8") as f:
                spec_json = json.load(f)
        except FileNotFoundError:
            raise InputError(f"Grammar spec not found: {spec_json}") from None
        except json.JSONDecodeError as e:
            raise InputError(f"Failed to parse grammar spec {spec_json}: {e}") from None

    try:
        vocabulary = LabelVocabulary(tuple(spec_json["classes"]))
        sequences = []
        weights = []
        for entry in spec_json["sequences"]:
            if isinstance(entry, dict):
                sequences.append(tuple(entry["labels"]))
                weights.append(float(entry.get("weight", 1.0)))
            else:
                sequences.append(tuple(entry))
                weights.append(1.0)
        default = spec_json.get("default_length")
        lengths = {}
        for name in vocabulary.names:
            rng = spec_json.get("lengths", {}).get(name, default)
            if rng is not None:
                lengths[name] = (int(rng[0]), int(rng[1]))
        return SyntheticGrammarSpec(
            vocabulary=vocabulary,
            sequences=tuple(sequences),
            weights=tuple(weights),
            lengths=lengths,
            num_videos=int(spec_json["videos"]),
            seed=int(spec_json.get("seed", 0)),
            transition_noise=float(spec_json.get("transition_noise", 0.0)),
            decoded_flip_rate=float(spec_json.get("decoded_flip_rate", 0.0)),
        )
    except KeyError as e:
        raise InputError(f"Grammar spec is missing key {e}") from None
    except InputError:
        raise
    except (TypeError, ValueError) as e:
        raise InputError(f"Malformed grammar spec: {e}") from None


def _read_lines(path: Path) -> List[Tuple[int, str]]:
    try:
        text = path.read_text(encoding="utf8")
    except FileNotFoundError:
        raise InputError(f"File not found: {path}") from None
    except (OSError, UnicodeDecodeError) as e:
        raise InputError(f"Failed to read {path}: {e}") from None
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        out.append((lineno, line))
    return out


def load_vocabulary(vocab_file: PathLike) -> LabelVocabulary:
    lines = _read_lines(Path(vocab_file))
    if not lines:
        raise InputError(f"Vocabulary file is empty: {vocab_file}")
    matches = [_MAPPING_LINE.match(line) for _, line in lines]
    if all(matches):
        names = []
        for expected, ((lineno, _), m) in enumerate(zip(lines, matches)):
            if int(m.group(1)) != expected:
                raise InputError(
                    f"{vocab_file}:{lineno}: expected index {expected}, found {m.group(1)}"
                )
            names.append(m.group(2))
    else:
        names = [line for _, line in lines]
    return LabelVocabulary(tuple(names))


def parse_label_file(path: PathLike, vocabulary: LabelVocabulary) -> FrameTimeline:
    path = Path(path)
    frames = []
    for lineno, name in _read_lines(path):
        try:
            frames.append(vocabulary.index(name))
        except KeyError:
            raise InputError(f"{path}:{lineno}: unknown label {name!r}") from None
    if not frames:
        raise InputError(f"Label file is empty: {path}")
    return FrameTimeline(frames, num_classes=len(vocabulary))


def write_labels(
    path: PathLike,
    timeline: FrameTimeline,
    vocabulary: LabelVocabulary,
    header: Optional[str] = None,
) -> None:
    """Write one class name per frame; ``header`` becomes a leading comment line."""
    lines = []
    if header:
        lines.append(f"# {header}")
    lines.extend(vocabulary.name(label) for label in timeline)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf8")


def write_vocabulary(path: PathLike, vocabulary: LabelVocabulary) -> None:
    lines = [f"{i} {name}" for i, name in enumerate(vocabulary.names)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf8")


def _label_files(label_dir: Path, pattern: str) -> List[Path]:
    if not label_dir.is_dir():
        raise InputError(f"Label directory not found: {label_dir}")
    files = sorted(p for p in label_dir.glob(pattern) if p.is_file())
    if not files:
        raise InputError(f"No label files matching {pattern} in {label_dir}")
    return files


def _load_video(
    path: Path, vocabulary: LabelVocabulary, decoded_dir: Optional[Path]
) -> VideoRecord:
    ground_truth = parse_label_file(path, vocabulary)
    decoded = None
    if decoded_dir is not None:
        decoded_path = decoded_dir / path.name
        if decoded_path.is_file():
            decoded = parse_label_file(decoded_path, vocabulary)
            if len(decoded) != len(ground_truth):
                raise InputError(
                    f"{decoded_path}: {len(decoded)} decoded frames vs "
                    f"{len(ground_truth)} ground-truth frames in {path}"
                )
        else:
            logger.debug(f"No decoded labels for {path.stem}")
    return VideoRecord(path.stem, ground_truth, decoded)


def load_corpus(
    label_dir: PathLike,
    vocab_file: PathLike,
    decoded_dir: Optional[PathLike] = None,
    pattern: str = "*.txt",
) -> Corpus:
    """
    Load every label file of a directory into a Corpus.

    Args:
        label_dir: directory with one ground-truth label file per video
        vocab_file: vocabulary file defining class order
        decoded_dir: optional directory with decoded (noisy) label files of
            the same names
        pattern: glob selecting label files; the video id is the file stem

    Returns:
        Corpus with videos in file-name order
    """
    vocabulary = load_vocabulary(vocab_file)
    decoded = Path(decoded_dir) if decoded_dir is not None else None
    videos = [
        _load_video(path, vocabulary, decoded)
        for path in _label_files(Path(label_dir), pattern)
    ]
    corpus = Corpus(vocabulary, tuple(videos))
    logger.info(f"Loaded {len(corpus)} videos with {len(vocabulary)} classes from {label_dir}")
    return corpus


async def load_corpus_async(
    label_dir: PathLike,
    vocab_file: PathLike,
    decoded_dir: Optional[PathLike] = None,
    pattern: str = "*.txt",
) -> Corpus:
    """Same as load_corpus, reading the per-video files concurrently."""
    vocabulary = await asyncio.to_thread(load_vocabulary, vocab_file)
    decoded = Path(decoded_dir) if decoded_dir is not None else None
    files = _label_files(Path(label_dir), pattern)
    videos = await asyncio.gather(
        *(asyncio.to_thread(_load_video, path, vocabulary, decoded) for path in files)
    )
    corpus = Corpus(vocabulary, tuple(videos))
    logger.info(f"Loaded {len(corpus)} videos with {len(vocabulary)} classes from {label_dir}")
    return corpus


def load_split(split_file: PathLike, corpus: Corpus) -> SplitSpec:
    """Read test ids (one per line); every other corpus video is training data."""
    test_ids = []
    for lineno, entry in _read_lines(Path(split_file)):
        video_id = entry
        if video_id not in corpus and Path(entry).stem in corpus:
            video_id = Path(entry).stem
        if video_id not in corpus:
            raise InputError(f"{split_file}:{lineno}: unknown video id {entry!r}")
        if video_id not in test_ids:
            test_ids.append(video_id)
    test_set = set(test_ids)
    train_ids = [video_id for video_id in corpus.ids if video_id not in test_set]
    split = SplitSpec(tuple(train_ids), tuple(test_ids))
    split.validate(corpus)
    return split


def write_split(path: PathLike, test_ids: Sequence[str]) -> None:
    Path(path).write_text("\n".join(test_ids) + "\n", encoding="utf8")


def mean_segment_count(timelines: Iterable[FrameTimeline]) -> float:
    counts = [len(segments_from_frames(t)) for t in timelines]
    if not counts:
        raise InputError("Cannot average segment counts over zero videos")
    return float(np.mean(counts))


def _relabel(rng: np.random.Generator, num_classes: int, exclude: Iterable[int]) -> Optional[int]:
    excluded = set(exclude)
    candidates = [c for c in range(num_classes) if c not in excluded]
    if not candidates:
        return None
    return int(candidates[rng.integers(len(candidates))])


def generate_synthetic(spec: SyntheticGrammarSpec) -> Corpus:
    """Draw ``spec.num_videos`` videos from the grammar; fully determined by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    vocabulary = spec.vocabulary
    num_classes = len(vocabulary)
    probs = np.array(spec.weights) / sum(spec.weights)
    width = max(4, len(str(spec.num_videos - 1)))
    videos = []
    for i in range(spec.num_videos):
        choice = int(rng.choice(len(spec.sequences), p=probs))
        labels = [vocabulary.index(name) for name in spec.sequences[choice]]
        if spec.transition_noise > 0:
            for j in range(1, len(labels)):
                if rng.random() < spec.transition_noise:
                    neighbours = [labels[j], labels[j - 1]]
                    if j + 1 < len(labels):
                        neighbours.append(labels[j + 1])
                    replacement = _relabel(rng, num_classes, neighbours)
                    if replacement is not None:
                        labels[j] = replacement
        lengths = []
        for label in labels:
            lo, hi = spec.lengths.get(vocabulary.name(label), _fallback_range(spec))
            lengths.append(int(rng.integers(lo, hi + 1)))
        frames = np.repeat(np.array(labels), np.array(lengths))
        decoded = None
        if spec.decoded_flip_rate > 0:
            noisy = list(labels)
            for j, label in enumerate(labels):
                if rng.random() < spec.decoded_flip_rate:
                    replacement = _relabel(rng, num_classes, [label])
                    if replacement is not None:
                        noisy[j] = replacement
            decoded = FrameTimeline(np.repeat(np.array(noisy), np.array(lengths)))
        videos.append(
            VideoRecord(f"synth_{i:0{width}d}", FrameTimeline(frames, num_classes), decoded)
        )
    return Corpus(vocabulary, tuple(videos))


def _fallback_range(spec: SyntheticGrammarSpec) -> Tuple[int, int]:
    # classes reached only through transition noise borrow the widest configured range
    lows, highs = zip(*spec.lengths.values())
    return min(lows), max(highs)


def write_corpus(
    corpus: Corpus,
    out_dir: PathLike,
    test_fraction: float = 0.2,
    header: Optional[str] = None,
) -> Dict[str, Path]:
    """Write a corpus in the on-disk layout load_corpus reads.

    Produces ``groundTruth/``, ``decoded/`` (when any video has decoded
    labels), ``mapping.txt`` and ``split1.test`` holding the last
    ``test_fraction`` of the videos.
    """
    out = Path(out_dir)
    gt_dir = out / "groundTruth"
    gt_dir.mkdir(parents=True, exist_ok=True)
    paths = {"labels": gt_dir, "vocab": out / "mapping.txt", "split": out / "split1.test"}
    write_vocabulary(paths["vocab"], corpus.vocabulary)
    if any(v.decoded is not None for v in corpus):
        paths["decoded"] = out / "decoded"
        paths["decoded"].mkdir(parents=True, exist_ok=True)
    for video in corpus:
        write_labels(
            gt_dir / f"{video.video_id}.txt", video.ground_truth, corpus.vocabulary, header
        )
        if video.decoded is not None:
            write_labels(
                paths["decoded"] / f"{video.video_id}.txt",
                video.decoded,
                corpus.vocabulary,
                header,
            )
    num_test = max(1, int(round(len(corpus) * test_fraction)))
    if num_test >= len(corpus):
        raise InputError("Corpus too small to hold out a test split")
    write_split(paths["split"], corpus.ids[-num_test:])
    return paths

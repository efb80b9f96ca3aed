"""Frame-level and action-level scoring of future predictions.

MoC (mean over classes) pools per-class frame counts across all test videos
before averaging over the classes present in the ground truth. Classes absent
from the scored span never enter the mean.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from .data import Corpus, SplitSpec, VideoRecord
from .exceptions import ConsistencyError, InputError
from .timeline import FrameTimeline, ObservationSplit, frames_for_fraction, segments_from_frames

logger = logging.getLogger(__name__)

OBSERVED_GT = "gt"
OBSERVED_DECODED = "decoded"
ACTION_POSITIONS = 3
IOU_THRESHOLD = 0.5
DEFAULT_ALPHAS = (0.2, 0.3)
DEFAULT_BETAS = (0.1, 0.2, 0.3, 0.5)
DEFAULT_BUCKET_EDGES = (0, 100, 500, 1000, 2000, math.inf)

Cell = Tuple[float, float]


class Predictor(Protocol):
    name: str

    def predict(
        self,
        observed: FrameTimeline,
        video_length: int,
        horizon_frames: int,
        rng: Optional[np.random.Generator] = None,
    ) -> FrameTimeline:
        ...


def _check_lengths(pred: FrameTimeline, gt: FrameTimeline) -> None:
    if len(pred) != len(gt):
        raise InputError(f"Prediction has {len(pred)} frames, ground truth has {len(gt)}")


def class_counts(
    pred: FrameTimeline, gt: FrameTimeline, num_classes: int
) -> Tuple[np.ndarray, np.ndarray]:
    """(correct, total) frame counts per ground-truth class."""
    _check_lengths(pred, gt)
    truth = gt.frames
    total = np.bincount(truth, minlength=num_classes)
    correct = np.bincount(truth[pred.frames == truth], minlength=num_classes)
    return correct, total


def moc_from_counts(correct: np.ndarray, total: np.ndarray) -> Tuple[float, Dict[int, float]]:
    present = np.flatnonzero(total)
    if present.size == 0:
        raise InputError("No ground-truth frames to score")
    per_class = {int(c): float(correct[c] / total[c]) for c in present}
    return float(np.mean(list(per_class.values()))), per_class


def moc_accuracy(pred: FrameTimeline, gt: FrameTimeline) -> Tuple[float, Dict[int, float]]:
    """
    Mean over classes of the frame accuracy within each ground-truth class.

    Returns:
        (MoC, {class index: accuracy}) over the classes present in ``gt``
    """
    _check_lengths(pred, gt)
    num_classes = max(pred.max_label(), gt.max_label()) + 1
    return moc_from_counts(*class_counts(pred, gt, num_classes))


def interval_iou(a: Tuple[int, int], b: Tuple[int, int]) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def action_level_accuracy(
    pred: FrameTimeline,
    gt: FrameTimeline,
    positions: int = ACTION_POSITIONS,
    threshold: float = IOU_THRESHOLD,
) -> Tuple[bool, ...]:
    """Hit/miss of the 1st..``positions``-th future action.

    The k-th predicted segment hits when it exists, carries the label of the
    k-th ground-truth segment and overlaps it with IoU >= ``threshold``. A
    missing ground-truth action counts as a miss.
    """
    _check_lengths(pred, gt)
    pred_segs = segments_from_frames(pred).intervals()
    gt_segs = segments_from_frames(gt).intervals()
    hits = []
    for k in range(positions):
        if k >= len(pred_segs) or k >= len(gt_segs):
            hits.append(False)
            continue
        p_label, p_start, p_end = pred_segs[k]
        g_label, g_start, g_end = gt_segs[k]
        hits.append(
            p_label == g_label and interval_iou((p_start, p_end), (g_start, g_end)) >= threshold
        )
    return tuple(hits)


@dataclass(frozen=True, eq=False)
class VideoResult:
    video_id: str
    alpha: float
    beta: float
    video_length: int
    observed_frames: int
    predicted_frames: int
    correct: np.ndarray
    total: np.ndarray
    action_hits: Tuple[bool, ...]
    predicted_segments: int

    @property
    def moc(self) -> float:
        return moc_from_counts(self.correct, self.total)[0]


def length_bucketed_moc(
    results: Iterable[VideoResult], edges: Sequence[float] = DEFAULT_BUCKET_EDGES
) -> Dict[Tuple[float, float], Tuple[int, float]]:
    """
    Pooled MoC of the videos whose predicted span falls in each (lo, hi] bucket.

    Returns:
        {(lo, hi): (video count, MoC)} for populated buckets only
    """
    edges = list(edges)
    if len(edges) < 2:
        raise InputError("Length buckets need at least two edges")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise InputError(f"Bucket edges must be increasing, got {edges}")
    pooled: Dict[Tuple[float, float], List[VideoResult]] = {}
    for result in results:
        for lo, hi in zip(edges, edges[1:]):
            if lo < result.predicted_frames <= hi:
                pooled.setdefault((lo, hi), []).append(result)
                break
    out = {}
    for bucket in sorted(pooled):
        members = pooled[bucket]
        correct = np.sum([r.correct for r in members], axis=0)
        total = np.sum([r.total for r in members], axis=0)
        out[bucket] = (len(members), moc_from_counts(correct, total)[0])
    return out


@dataclass
class EvaluationReport:
    model: str
    alphas: Tuple[float, ...]
    betas: Tuple[float, ...]
    num_classes: int
    results: List[VideoResult] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def video_count(self) -> int:
        return len({r.video_id for r in self.results})

    def cell(self, alpha: float, beta: float) -> List[VideoResult]:
        return [r for r in self.results if r.alpha == alpha and r.beta == beta]

    def counts(self, alpha: float, beta: float) -> Tuple[np.ndarray, np.ndarray]:
        cell = self.cell(alpha, beta)
        if not cell:
            raise InputError(f"No results for observation {alpha}, prediction {beta}")
        return (
            np.sum([r.correct for r in cell], axis=0),
            np.sum([r.total for r in cell], axis=0),
        )

    def moc(self, alpha: float, beta: float) -> float:
        return moc_from_counts(*self.counts(alpha, beta))[0]

    def per_class(self, alpha: float, beta: float) -> Dict[int, float]:
        return moc_from_counts(*self.counts(alpha, beta))[1]

    def per_video_moc(self, alpha: float, beta: float) -> Dict[str, float]:
        return {r.video_id: r.moc for r in self.cell(alpha, beta)}

    def action_accuracy(self, alpha: float, beta: float) -> Tuple[float, ...]:
        hits = np.array([r.action_hits for r in self.cell(alpha, beta)], dtype=float)
        return tuple(float(x) for x in hits.mean(axis=0))

    def mean_predicted_segments(self, alpha: float, beta: float) -> float:
        return float(np.mean([r.predicted_segments for r in self.cell(alpha, beta)]))

    def grid(self) -> Dict[Cell, float]:
        return {(a, b): self.moc(a, b) for a in self.alphas for b in self.betas}

    def bucketed(
        self, alpha: float, beta: float, edges: Sequence[float] = DEFAULT_BUCKET_EDGES
    ) -> Dict[Tuple[float, float], Tuple[int, float]]:
        return length_bucketed_moc(self.cell(alpha, beta), edges)


def _observation_source(video: VideoRecord, observed_source: str) -> FrameTimeline:
    if observed_source == OBSERVED_GT:
        return video.ground_truth
    if video.decoded is None:
        raise InputError(f"Video {video.video_id} has no decoded labels")
    return video.decoded


def _evaluate_video(
    predictor: Predictor,
    video: VideoRecord,
    video_index: int,
    alphas: Sequence[float],
    betas: Sequence[float],
    observed_source: str,
    seed: int,
    num_classes: int,
    positions: int,
) -> List[VideoResult]:
    source = _observation_source(video, observed_source)
    gt = video.ground_truth
    total = len(gt)
    results = []
    for ai, alpha in enumerate(alphas):
        t = frames_for_fraction(alpha, total)
        if t < 1:
            raise InputError(f"Video {video.video_id}: observing {alpha} leaves no frames")
        observed = source[:t]
        for bi, beta in enumerate(betas):
            horizon = frames_for_fraction(beta, total)
            if horizon < 1:
                raise InputError(
                    f"Video {video.video_id} ({total} frames) is too short to predict {beta}"
                )
            rng = np.random.default_rng([seed, video_index, ai, bi])
            pred = predictor.predict(observed, total, horizon, rng)
            if len(pred) != horizon:
                raise ConsistencyError(
                    f"{predictor.name} returned {len(pred)} frames for video "
                    f"{video.video_id}, expected {horizon}"
                )
            future = gt[t : t + horizon]
            correct, counts = class_counts(pred, future, num_classes)
            results.append(
                VideoResult(
                    video_id=video.video_id,
                    alpha=alpha,
                    beta=beta,
                    video_length=total,
                    observed_frames=t,
                    predicted_frames=horizon,
                    correct=correct,
                    total=counts,
                    action_hits=action_level_accuracy(pred, future, positions),
                    predicted_segments=len(segments_from_frames(pred)),
                )
            )
    return results


def evaluate_grid(
    predictor: Predictor,
    corpus: Corpus,
    split: SplitSpec,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    betas: Sequence[float] = DEFAULT_BETAS,
    observed_source: str = OBSERVED_GT,
    seed: int = 0,
    workers: int = 1,
    positions: int = ACTION_POSITIONS,
    config: Optional[Dict[str, Any]] = None,
) -> EvaluationReport:
    """
    Score a predictor on every test video for every (observation, prediction) pair.

    Args:
        predictor: object with ``name`` and ``predict(observed, video_length,
            horizon_frames, rng)``
        corpus: videos and vocabulary
        split: the test ids are scored, training ids are ignored here
        alphas: observed fractions; frames [0, floor(alpha * T)) are observed
        betas: predicted fractions; floor(beta * T) frames are scored
        observed_source: ``"gt"`` or ``"decoded"`` labels for the observed part
        seed: base seed; each video and grid cell gets its own generator
        workers: number of threads predicting videos concurrently
        positions: number of future actions scored at action level
        config: run settings echoed into the report

    Returns:
        EvaluationReport with results sorted by video id, then alpha, then beta
    """
    if observed_source not in (OBSERVED_GT, OBSERVED_DECODED):
        raise InputError(f"Unknown observation source: {observed_source}")
    if not alphas or not betas:
        raise InputError("Evaluation needs at least one observation and one prediction fraction")
    alphas, betas = tuple(alphas), tuple(betas)
    for alpha in alphas:
        for beta in betas:
            ObservationSplit(alpha, beta)
    split.validate(corpus)
    videos = sorted(corpus.select(split.test_ids), key=lambda v: v.video_id)
    if observed_source == OBSERVED_DECODED:
        missing = [v.video_id for v in videos if v.decoded is None]
        if missing:
            raise InputError(f"Missing decoded labels for {len(missing)} videos: {missing[:5]}")

    num_classes = len(corpus.vocabulary)

    def run(indexed):
        index, video = indexed
        return _evaluate_video(
            predictor, video, index, alphas, betas, observed_source, seed, num_classes, positions
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            per_video = list(executor.map(run, enumerate(videos)))
    else:
        per_video = [run(item) for item in enumerate(videos)]

    report = EvaluationReport(
        model=predictor.name,
        alphas=alphas,
        betas=betas,
        num_classes=num_classes,
        results=[r for results in per_video for r in results],
        config=dict(config or {}),
    )
    for alpha in alphas:
        for beta in betas:
            logger.info(
                f"{predictor.name} obs {alpha:g} pred {beta:g}: MoC {report.moc(alpha, beta):.4f}"
            )
    return report


def mean_grid(reports: Sequence[EvaluationReport]) -> Dict[Cell, float]:
    """Average the MoC grid of several splits of the same model."""
    if not reports:
        raise InputError("No reports to average")
    grids = [r.grid() for r in reports]
    return {cell: float(np.mean([g[cell] for g in grids])) for cell in grids[0]}


def cell_label(alpha: float, beta: float) -> str:
    return f"obs{alpha:g}_pred{beta:g}"


def grid_frame(
    reports: Dict[str, Sequence[EvaluationReport]], metric: str = "moc"
) -> pd.DataFrame:
    """One row per model, one MoC column per (alpha, beta), splits averaged.

    ``metric="actions"`` adds the per-position action accuracies next to each
    cell.
    """
    rows = {}
    for model, model_reports in reports.items():
        grid = mean_grid(model_reports)
        row = {}
        for alpha, beta in grid:
            label = cell_label(alpha, beta)
            row[label] = grid[(alpha, beta)]
            if metric == "actions":
                accuracies = np.mean(
                    [r.action_accuracy(alpha, beta) for r in model_reports], axis=0
                )
                for k, acc in enumerate(accuracies, start=1):
                    row[f"{label}_action{k}"] = float(acc)
        rows[model] = row
    frame = pd.DataFrame.from_dict(rows, orient="index")
    frame.index.name = "model"
    return frame


def summary_frame(report: EvaluationReport) -> pd.DataFrame:
    """Per-cell diagnostics: pooled and per-video MoC, segment counts, action accuracy."""
    rows = []
    for alpha in report.alphas:
        for beta in report.betas:
            row = {
                "alpha": alpha,
                "beta": beta,
                "videos": len(report.cell(alpha, beta)),
                "moc": report.moc(alpha, beta),
                "moc_per_video": float(np.mean(list(report.per_video_moc(alpha, beta).values()))),
                "mean_predicted_segments": report.mean_predicted_segments(alpha, beta),
            }
            for k, acc in enumerate(report.action_accuracy(alpha, beta), start=1):
                row[f"action{k}"] = acc
            rows.append(row)
    return pd.DataFrame(rows)


def video_frame(report: EvaluationReport) -> pd.DataFrame:
    rows = []
    for r in report.results:
        row = {
            "video_id": r.video_id,
            "alpha": r.alpha,
            "beta": r.beta,
            "video_length": r.video_length,
            "observed_frames": r.observed_frames,
            "predicted_frames": r.predicted_frames,
            "moc": r.moc,
            "predicted_segments": r.predicted_segments,
        }
        for k, hit in enumerate(r.action_hits, start=1):
            row[f"action{k}"] = int(hit)
        rows.append(row)
    return pd.DataFrame(rows)


def bucket_frame(
    reports: Dict[str, Sequence[EvaluationReport]], edges: Sequence[float] = DEFAULT_BUCKET_EDGES
) -> pd.DataFrame:
    rows = []
    for model, model_reports in reports.items():
        for split_index, report in enumerate(model_reports):
            for alpha in report.alphas:
                for beta in report.betas:
                    for (lo, hi), (count, moc) in report.bucketed(alpha, beta, edges).items():
                        rows.append(
                            {
                                "model": model,
                                "split": split_index,
                                "alpha": alpha,
                                "beta": beta,
                                "frames_above": lo,
                                "frames_upto": hi,
                                "videos": count,
                                "moc": moc,
                            }
                        )
    return pd.DataFrame(rows)


def write_csv(frame: pd.DataFrame, path, header: Optional[str] = None, index: bool = False) -> None:
    """Write a report table, preceded by a ``#`` comment line when ``header`` is given."""
    with open(path, "w", encoding="utf8", newline="") as f:
        if header:
            f.write(f"# {header}\n")
        frame.to_csv(f, index=index, float_format="%.6f")

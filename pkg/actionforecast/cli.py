"""Command-line entry point: train, predict, evaluate, gradcheck, synth."""

import asyncio
import dataclasses
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import click
import numpy as np
import pandas as pd

from . import __version__
from .baselines import GrammarForecaster, NearestNeighborForecaster
from .checkpoint import check_vocabulary, load_checkpoint, save_checkpoint
from .cnn import ARCHITECTURE as CNN_ARCHITECTURE
from .cnn import (
    CnnConfig,
    CnnForecaster,
    CnnModel,
    cnn_forward,
    dump_matrix_csv,
    encode_matrix,
    smooth_output,
    train_cnn,
)
from .config import (
    MODEL_GRAMMAR,
    MODEL_KINDS,
    MODEL_NN,
    MODEL_RNN,
    TRAINED_KINDS,
    RunConfig,
    load_run_config,
)
from .data import (
    DEMO_GRAMMAR,
    Corpus,
    SplitSpec,
    generate_synthetic,
    load_corpus_async,
    load_grammar_spec,
    load_split,
    write_corpus,
    write_labels,
)
from .evaluation import (
    OBSERVED_DECODED,
    OBSERVED_GT,
    EvaluationReport,
    Predictor,
    bucket_frame,
    evaluate_grid,
    grid_frame,
    mean_grid,
    summary_frame,
    video_frame,
    write_csv,
)
from .exceptions import ConsistencyError, ForecastIncomplete, InputError, NumericalError
from .gradcheck import DEFAULT_TOLERANCE, check_all, require_passing
from .plots import plot_moc_curves, render_timelines
from .rnn import ARCHITECTURE as RNN_ARCHITECTURE
from .rnn import RnnForecaster, RnnModel, train_rnn
from .timeline import frames_for_fraction, segments_from_frames

logger = logging.getLogger(__name__)

_HANDLED = (InputError, ConsistencyError, NumericalError, ForecastIncomplete)


def _exit_on_error(func):
    """Print handled errors and exit with the code of their type."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except _HANDLED as e:
            logger.debug("Command failed", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def corpus_options(func):
    options = [
        click.option("--config", "config_file", help="JSON run config; flags override it"),
        click.option("--data", help="Directory with one ground-truth label file per video"),
        click.option("--vocab", help="Vocabulary file (names, or 'index name' lines)"),
        click.option("--split", "splits", multiple=True, help="Test split file; repeat for folds"),
        click.option("--decoded", help="Directory with decoded label files"),
        click.option("--seed", type=int, help="Seed for training and random choices"),
        click.option("--out", help="Output directory"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def model_options(func):
    options = [
        click.option("--loss", type=click.Choice(["squared", "xent"]), help="CNN loss"),
        click.option("--sigma", type=float, help="CNN output smoothing; 0 disables it"),
        click.option("--rows", type=int, help="CNN matrix rows S"),
        click.option("--preset", type=click.Choice(["breakfast", "50salads", "synthetic"])),
        click.option("--epochs", type=int, help="Training epochs"),
        click.option("--hidden", type=int, help="RNN hidden width"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _run_config(command: str, config_file: Optional[str], **flags) -> RunConfig:
    base = load_run_config(config_file) if config_file else RunConfig()
    return base.merged(command=command, **flags)


def _apply_model_flags(
    cfg: RunConfig, loss=None, sigma=None, rows=None, preset=None, epochs=None, hidden=None
) -> RunConfig:
    cnn = CnnConfig.preset(preset) if preset else cfg.cnn
    cnn_changes = {"seed": cfg.seed}
    if loss is not None:
        cnn_changes["loss"] = loss
    if sigma is not None:
        cnn_changes["sigma"] = sigma if sigma > 0 else None
    if rows is not None:
        cnn_changes["rows"] = rows
    if epochs is not None:
        cnn_changes["epochs"] = epochs
    rnn_changes = {"seed": cfg.seed}
    if epochs is not None:
        rnn_changes["epochs"] = epochs
    if hidden is not None:
        rnn_changes["hidden_size"] = hidden
    return dataclasses.replace(
        cfg,
        cnn=dataclasses.replace(cnn, **cnn_changes),
        rnn=dataclasses.replace(cfg.rnn, **rnn_changes),
    )


def _load_corpus(cfg: RunConfig) -> Corpus:
    if not cfg.data or not cfg.vocab:
        raise InputError("Both --data and --vocab are required")
    return asyncio.run(load_corpus_async(cfg.data, cfg.vocab, cfg.decoded))


def _load_splits(cfg: RunConfig, corpus: Corpus) -> List[SplitSpec]:
    if not cfg.splits:
        raise InputError("At least one --split file is required")
    return [load_split(path, corpus) for path in cfg.splits]


def _train(kind: str, cfg: RunConfig, corpus: Corpus, split: SplitSpec):
    videos = [v.ground_truth for v in corpus.select(split.train_ids)]
    num_classes = len(corpus.vocabulary)
    digest = corpus.vocabulary.digest()
    if kind == MODEL_RNN:
        return train_rnn(videos, num_classes, cfg.rnn, digest)
    return train_cnn(videos, num_classes, cfg.cnn, digest)


def _load_trained(kind: str, path: str, corpus: Corpus) -> Predictor:
    architecture = RNN_ARCHITECTURE if kind == MODEL_RNN else CNN_ARCHITECTURE
    checkpoint = load_checkpoint(path, architecture)
    check_vocabulary(checkpoint, corpus.vocabulary.digest(), path)
    if kind == MODEL_RNN:
        return RnnForecaster(RnnModel.from_checkpoint(checkpoint))
    return CnnForecaster(CnnModel.from_checkpoint(checkpoint))


def _build_predictor(
    kind: str, cfg: RunConfig, corpus: Corpus, split: SplitSpec, checkpoint: Optional[str]
) -> Predictor:
    if kind == MODEL_GRAMMAR:
        return GrammarForecaster.from_timelines(
            [v.ground_truth for v in corpus.select(split.train_ids)]
        )
    if kind == MODEL_NN:
        return NearestNeighborForecaster([v.ground_truth for v in corpus.select(split.train_ids)])
    if checkpoint:
        return _load_trained(kind, checkpoint, corpus)
    logger.info(f"No checkpoint for {kind}; training on {len(split.train_ids)} videos")
    model = _train(kind, cfg, corpus, split).model
    return RnnForecaster(model) if kind == MODEL_RNN else CnnForecaster(model)


@click.group()
@click.version_option(__version__)
@click.option("--debug", is_flag=True, help="Verbose logging")
def main(debug: bool):
    """Anticipate future activities from partially observed videos."""
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--model", type=click.Choice(TRAINED_KINDS), required=True)
@click.option("--checkpoint", help="Checkpoint path (default <out>/<model>.ckpt)")
@corpus_options
@model_options
@_exit_on_error
def train(model, checkpoint, config_file, data, vocab, splits, decoded, seed, out, **model_flags):
    """Train an RNN or CNN forecaster on the training part of a split."""
    cfg = _run_config(
        "train", config_file, data=data, vocab=vocab, splits=splits, decoded=decoded,
        seed=seed, out=out, models=(model,),
    )
    cfg = _apply_model_flags(cfg, **model_flags)
    corpus = _load_corpus(cfg)
    split_list = _load_splits(cfg, corpus)
    if len(split_list) > 1:
        logger.warning(f"Training uses the first of {len(split_list)} splits")
    result = _train(model, cfg, corpus, split_list[0])

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(checkpoint) if checkpoint else out_dir / f"{model}.ckpt"
    save_checkpoint(path, result.model.to_checkpoint())
    losses = pd.DataFrame({"epoch": range(1, len(result.losses) + 1), "loss": result.losses})
    write_csv(losses, out_dir / f"{model}_losses.csv", header=cfg.echo())
    click.echo(f"Saved {model} checkpoint to {path}")


@main.command()
@click.option("--model", type=click.Choice(MODEL_KINDS), required=True)
@click.option("--checkpoint", help="Checkpoint of a trained rnn/cnn model")
@click.option("--video", "video_id", required=True, help="Video id (label file stem)")
@click.option("--obs", "alpha", type=float, required=True, help="Observed fraction")
@click.option("--pred", "beta", type=float, required=True, help="Predicted fraction")
@click.option("--observed", type=click.Choice([OBSERVED_GT, OBSERVED_DECODED]))
@click.option("--output", help="Predicted label file (default <out>/<video>_<model>.txt)")
@click.option("--render", help="Also draw ground truth and prediction into this PNG")
@click.option("--dump-matrices", help="Directory for the CNN input/output matrices as CSV")
@corpus_options
@_exit_on_error
def predict(
    model, checkpoint, video_id, alpha, beta, observed, output, render, dump_matrices,
    config_file, data, vocab, splits, decoded, seed, out,
):
    """Predict the future labels of one video and write them as a label file."""
    cfg = _run_config(
        "predict", config_file, data=data, vocab=vocab, splits=splits, decoded=decoded,
        seed=seed, out=out, models=(model,), alphas=(alpha,), betas=(beta,), observed=observed,
    )
    if model in TRAINED_KINDS and not checkpoint:
        raise InputError(f"--checkpoint is required for {model}")
    corpus = _load_corpus(cfg)
    video = corpus.get(video_id)
    if cfg.splits:
        split = _load_splits(cfg, corpus)[0]
    else:
        split = SplitSpec(tuple(i for i in corpus.ids if i != video_id), (video_id,))
    predictor = _build_predictor(model, cfg, corpus, split, checkpoint)

    source = video.ground_truth
    if cfg.observed == OBSERVED_DECODED:
        if video.decoded is None:
            raise InputError(f"Video {video_id} has no decoded labels")
        source = video.decoded
    total = len(source)
    t = frames_for_fraction(alpha, total)
    horizon = frames_for_fraction(beta, total)
    if t < 1 or horizon < 1 or t + horizon > total:
        raise InputError(f"Cannot observe {alpha} and predict {beta} of {total} frames")
    observed_part = source[:t]
    prediction = predictor.predict(observed_part, total, horizon, np.random.default_rng([cfg.seed]))

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(output) if output else out_dir / f"{video_id}_{model}.txt"
    header = f"{cfg.echo()} video={video_id}"
    write_labels(path, prediction, corpus.vocabulary, header)
    click.echo(f"Wrote {len(prediction)} predicted frames to {path}")

    if render:
        render_timelines(
            [("ground truth", video.ground_truth), (model, observed_part.concat(prediction))],
            corpus.vocabulary,
            render,
            header=header,
        )
    if dump_matrices:
        if not isinstance(predictor, CnnForecaster):
            raise InputError("--dump-matrices needs a CNN model")
        cnn_model = predictor.model
        target = Path(dump_matrices)
        target.mkdir(parents=True, exist_ok=True)
        X = encode_matrix(
            segments_from_frames(observed_part), cnn_model.config.rows, cnn_model.num_classes
        )
        Y = cnn_forward(cnn_model, X)
        dump_matrix_csv(X, target / f"{video_id}_X.csv", corpus.vocabulary)
        dump_matrix_csv(Y, target / f"{video_id}_Y.csv", corpus.vocabulary)
        if cnn_model.config.sigma:
            smoothed = smooth_output(Y, cnn_model.config.sigma)
            dump_matrix_csv(smoothed, target / f"{video_id}_Y_smoothed.csv", corpus.vocabulary)


@main.command()
@click.option(
    "--model", "models", multiple=True, type=click.Choice(MODEL_KINDS),
    help="Model to evaluate; repeat for several",
)
@click.option(
    "--checkpoint", "checkpoints", multiple=True,
    help="Checkpoints for the rnn/cnn models, in --model order; missing ones are trained",
)
@click.option("--obs", "alphas", multiple=True, type=float, help="Observed fraction; repeatable")
@click.option("--pred", "betas", multiple=True, type=float, help="Predicted fraction; repeatable")
@click.option("--observed", type=click.Choice([OBSERVED_GT, OBSERVED_DECODED]))
@click.option("--metric", type=click.Choice(["moc", "actions", "buckets"]))
@click.option("--workers", type=int, help="Videos predicted concurrently")
@corpus_options
@model_options
@_exit_on_error
def evaluate(
    models, checkpoints, alphas, betas, observed, metric, workers,
    config_file, data, vocab, splits, decoded, seed, out, **model_flags,
):
    """Score models over the observation/prediction grid and write CSV tables and plots."""
    cfg = _run_config(
        "evaluate", config_file, data=data, vocab=vocab, splits=splits, decoded=decoded,
        seed=seed, out=out, models=models, checkpoints=checkpoints, alphas=alphas, betas=betas,
        observed=observed, metric=metric, workers=workers,
    )
    cfg = _apply_model_flags(cfg, **model_flags)
    corpus = _load_corpus(cfg)
    split_list = _load_splits(cfg, corpus)

    trained = [m for m in cfg.models if m in TRAINED_KINDS]
    if len(cfg.checkpoints) > len(trained):
        raise InputError(
            f"{len(cfg.checkpoints)} checkpoints given for {len(trained)} trained models"
        )
    checkpoint_of = dict(zip(trained, cfg.checkpoints))
    if checkpoint_of and len(split_list) > 1:
        logger.warning("The same checkpoints are scored on every split")

    reports: Dict[str, List[EvaluationReport]] = {m: [] for m in cfg.models}
    for k, split in enumerate(split_list, start=1):
        for kind in cfg.models:
            predictor = _build_predictor(kind, cfg, corpus, split, checkpoint_of.get(kind))
            report = evaluate_grid(
                predictor, corpus, split, cfg.alphas, cfg.betas, cfg.observed,
                seed=cfg.seed, workers=cfg.workers, config=cfg.to_dict(),
            )
            reports[kind].append(report)
            logger.info(f"Split {k}: {kind} scored on {report.video_count} videos")

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = cfg.echo()
    grid = grid_frame(reports, cfg.metric)
    write_csv(grid, out_dir / "grid.csv", header, index=True)
    summaries = []
    for kind, model_reports in reports.items():
        for k, report in enumerate(model_reports, start=1):
            write_csv(video_frame(report), out_dir / f"videos_{kind}_split{k}.csv", header)
            summary = summary_frame(report)
            summary.insert(0, "split", k)
            summary.insert(0, "model", kind)
            summaries.append(summary)
    write_csv(pd.concat(summaries, ignore_index=True), out_dir / "summary.csv", header)
    if cfg.metric == "buckets":
        write_csv(bucket_frame(reports, cfg.bucket_edges), out_dir / "buckets.csv", header)
    plot_moc_curves(
        {kind: mean_grid(model_reports) for kind, model_reports in reports.items()},
        cfg.alphas,
        cfg.betas,
        out_dir,
        header,
    )
    click.echo(grid.to_string(float_format=lambda v: f"{v:.4f}"))


@main.command()
@click.option("--tolerance", type=float, default=DEFAULT_TOLERANCE, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_exit_on_error
def gradcheck(tolerance, seed):
    """Compare analytic and finite-difference gradients of both models at toy size."""
    reports = check_all(seed, tolerance)
    for name, report in reports.items():
        block, error = report.worst
        status = "ok" if report.passed else "FAIL"
        click.echo(f"{name:<12} {status:<4} worst {block} {error:.3e}")
    require_passing(reports)


@main.command()
@click.option("--grammar", help="Grammar JSON; a built-in breakfast grammar by default")
@click.option("--videos", type=int, help="Number of videos to generate")
@click.option("--seed", type=int, help="Generator seed")
@click.option("--noise", type=float, help="Transition noise probability")
@click.option("--flip", type=float, help="Decoded-label flip probability per segment")
@click.option("--test-fraction", type=float, default=0.2, show_default=True)
@click.option("--out", required=True, help="Directory to write the corpus into")
@_exit_on_error
def synth(grammar, videos, seed, noise, flip, test_fraction, out):
    """Generate a synthetic corpus from an activity grammar."""
    spec = load_grammar_spec(grammar or DEMO_GRAMMAR)
    changes = {
        "num_videos": videos,
        "seed": seed,
        "transition_noise": noise,
        "decoded_flip_rate": flip,
    }
    spec = dataclasses.replace(spec, **{k: v for k, v in changes.items() if v is not None})
    corpus = generate_synthetic(spec)
    header = f"synthetic seed={spec.seed} videos={spec.num_videos}"
    paths = write_corpus(corpus, out, test_fraction, header)
    Path(out, "grammar.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True), encoding="utf8"
    )
    for kind, path in paths.items():
        click.echo(f"{kind}: {path}")


if __name__ == "__main__":
    main()

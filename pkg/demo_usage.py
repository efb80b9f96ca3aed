#!/usr/bin/env python3
"""
Demo script showing practical usage of actionforecast
"""

import asyncio
import tempfile

from actionforecast import (
    CnnConfig,
    CnnForecaster,
    GrammarForecaster,
    NearestNeighborForecaster,
    RnnConfig,
    RnnForecaster,
    evaluate_grid,
    generate_synthetic,
    load_corpus_async,
    load_grammar_spec,
    load_split,
    train_cnn,
    train_rnn,
)
from actionforecast.data import DEMO_GRAMMAR, write_corpus
from actionforecast.plots import render_timelines

ALPHA = 0.2
BETA = 0.5


async def load_demo_corpus(directory):
    """Write a synthetic corpus to disk and read it back the way real data is read"""
    print("\n--- Synthetic corpus ---")
    corpus = generate_synthetic(load_grammar_spec(dict(DEMO_GRAMMAR, videos=60)))
    paths = write_corpus(corpus, directory, test_fraction=0.2)
    corpus = await load_corpus_async(paths["labels"], paths["vocab"], paths.get("decoded"))
    split = load_split(paths["split"], corpus)
    print(f"{len(corpus)} videos, {len(split.test_ids)} held out")
    return corpus, split


def demo_predictors(corpus, split):
    """Train both forecasters and build both baselines on the training videos"""
    print("\n--- Predictors ---")
    train = [v.ground_truth for v in corpus.select(split.train_ids)]
    num_classes = len(corpus.vocabulary)

    rnn = train_rnn(train, num_classes, RnnConfig(hidden_size=32, embed_size=32, epochs=10))
    print(f"RNN loss {rnn.losses[0]:.4f} -> {rnn.losses[-1]:.4f}")
    cnn = train_cnn(train, num_classes, CnnConfig.preset("synthetic", epochs=20))
    print(f"CNN loss {cnn.losses[0]:.4f} -> {cnn.losses[-1]:.4f}")

    return [
        RnnForecaster(rnn.model),
        CnnForecaster(cnn.model),
        GrammarForecaster.from_timelines(train),
        NearestNeighborForecaster(train),
    ]


def demo_evaluation(predictors, corpus, split):
    """Score every predictor on the held-out videos"""
    print("\n--- Evaluation ---")
    for predictor in predictors:
        report = evaluate_grid(predictor, corpus, split, alphas=(ALPHA,), betas=(0.1, BETA))
        cells = "  ".join(f"pred {b:.0%}: {m:.3f}" for (_, b), m in report.grid().items())
        print(f"{predictor.name:<12} {cells}")


def demo_render(predictors, corpus, split, filename):
    """Draw one held-out video next to every forecast"""
    video = corpus.get(split.test_ids[0])
    total = len(video.ground_truth)
    t, horizon = int(ALPHA * total), int(BETA * total)
    observed = video.ground_truth[:t]
    rows = [("ground truth", video.ground_truth)]
    for predictor in predictors:
        rows.append((predictor.name, observed.concat(predictor.predict(observed, total, horizon))))
    render_timelines(rows, corpus.vocabulary, filename)
    print(f"\nSaved: {filename}")


async def main():
    """Run all demos"""
    print("actionforecast demo")
    print("=" * 50)

    with tempfile.TemporaryDirectory() as directory:
        corpus, split = await load_demo_corpus(directory)
    predictors = demo_predictors(corpus, split)
    demo_evaluation(predictors, corpus, split)
    demo_render(predictors, corpus, split, "demo_forecasts.png")

    print("\n" + "=" * 50)
    print("All demos completed!")


if __name__ == "__main__":
    asyncio.run(main())

"""Shared fixtures: small vocabularies, corpora and an on-disk synthetic dataset."""

import pytest

from actionforecast.data import (
    Corpus,
    SyntheticGrammarSpec,
    VideoRecord,
    generate_synthetic,
    load_grammar_spec,
    write_corpus,
)
from actionforecast.timeline import FrameTimeline, LabelVocabulary

A, B, C = 0, 1, 2


@pytest.fixture
def vocab():
    return LabelVocabulary(("A", "B", "C"))


@pytest.fixture
def tiny_corpus(vocab):
    videos = (
        VideoRecord("v1", FrameTimeline([A] * 4 + [B] * 6 + [C] * 10)),
        VideoRecord("v2", FrameTimeline([A] * 6 + [B] * 4 + [C] * 10)),
        VideoRecord("v3", FrameTimeline([A] * 5 + [C] * 10 + [B] * 5)),
        VideoRecord("v4", FrameTimeline([B] * 8 + [A] * 12)),
    )
    return Corpus(vocab, videos)


def grammar_json(videos=40, seed=0, noise=0.0, flip=0.0):
    return {
        "classes": ["A", "B", "C", "D", "E"],
        "sequences": [
            {"labels": ["A", "B", "C"]},
            {"labels": ["D", "E", "A", "B"]},
            {"labels": ["C", "D", "E"]},
        ],
        "lengths": {"A": [10, 10], "B": [15, 15], "C": [20, 20], "D": [10, 10], "E": [25, 25]},
        "videos": videos,
        "seed": seed,
        "transition_noise": noise,
        "decoded_flip_rate": flip,
    }


@pytest.fixture
def grammar_spec() -> SyntheticGrammarSpec:
    return load_grammar_spec(grammar_json())


@pytest.fixture
def synthetic_corpus(grammar_spec):
    return generate_synthetic(grammar_spec)


@pytest.fixture
def dataset_dir(tmp_path):
    """A small noisy synthetic corpus written to disk, with decoded labels and one split."""
    corpus = generate_synthetic(load_grammar_spec(grammar_json(videos=20, flip=0.3)))
    paths = write_corpus(corpus, tmp_path / "data", test_fraction=0.25)
    return paths


# every sequence sums to 200 frames and every boundary falls on a multiple of 10,
# so 20% observations and 50% targets encode exactly into 20 rows
FIXED_LENGTHS = {"A": 30, "B": 50, "C": 40, "D": 60, "E": 20, "F": 70, "G": 10, "H": 90}
FIXED_SEQUENCES = (
    ("A", "B", "C", "D", "E"),
    ("B", "F", "D", "E"),
    ("G", "A", "F", "B", "C"),
    ("E", "G", "H", "A", "B"),
    ("G", "E", "A", "G", "C", "H"),
)


def fixed_grammar_json(videos=250, seed=0, noise=0.0, jitter=0.0):
    """Five activity scripts with one length per class; ``jitter`` widens each length range."""
    return {
        "classes": sorted(FIXED_LENGTHS),
        "sequences": [{"labels": list(seq)} for seq in FIXED_SEQUENCES],
        "lengths": {
            name: [int(round(length * (1 - jitter))), int(round(length * (1 + jitter)))]
            for name, length in FIXED_LENGTHS.items()
        },
        "videos": videos,
        "seed": seed,
        "transition_noise": noise,
        "decoded_flip_rate": 0.0,
    }


def assert_loss_non_increasing(losses, tolerance=0.05):
    """Every epoch may exceed the previous one by at most ``tolerance`` (relative)."""
    assert len(losses) > 1
    for epoch, (before, after) in enumerate(zip(losses, losses[1:]), start=2):
        assert after <= before * (1 + tolerance), f"epoch {epoch}: {before:.6f} -> {after:.6f}"
    assert losses[-1] < losses[0]

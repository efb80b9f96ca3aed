import math

import numpy as np
import pytest

from actionforecast.checkpoint import load_checkpoint, save_checkpoint
from actionforecast.data import generate_synthetic, load_grammar_spec
from actionforecast.exceptions import ForecastIncomplete, InputError
from actionforecast.rnn import (
    RnnConfig,
    RnnForecaster,
    RnnModel,
    RnnPrediction,
    RnnTarget,
    encode_tokens,
    make_rnn_examples,
    rnn_loss,
    rnn_predict_future,
    train_rnn,
)
from actionforecast.timeline import FrameTimeline, SegmentSequence, segments_from_frames

from .conftest import assert_loss_non_increasing, grammar_json

A, B, C = 0, 1, 2


class ScriptedRng:
    """Stands in for a Generator, returning preset split points."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, low, high=None):
        return self.values.pop(0)


def constant_model(remaining=0.0, next_length=0.5, label=B, num_classes=3, scale=1.0):
    """A model whose heads ignore their input: biases only."""
    model = RnnModel.init(
        num_classes, RnnConfig(hidden_size=4, embed_size=4), scale, np.random.default_rng(0)
    )
    for value in model.params.values():
        value[...] = 0.0
    model.params["remaining.b"][0] = remaining
    model.params["next_length.b"][0] = next_length
    model.params["label.b"][label] = 20.0
    return model


class TestTokens:
    def test_single_segment(self):
        tokens = encode_tokens(SegmentSequence.from_pairs([(A, 10)]), 100, 1.0, 3)
        assert tokens[0].normalized_length == pytest.approx(0.1)
        assert tokens[0].label == A

    def test_scale(self):
        tokens = encode_tokens(SegmentSequence.from_pairs([(A, 10)]), 100, 6.0, 3)
        assert tokens[0].normalized_length == pytest.approx(0.6)

    def test_two_segments(self):
        tokens = encode_tokens(SegmentSequence.from_pairs([(A, 4), (B, 6)]), 10, 1.0, 3)
        assert [(t.normalized_length, t.label) for t in tokens] == [
            pytest.approx((0.4, A)),
            pytest.approx((0.6, B)),
        ]


class TestExamples:
    def test_count(self):
        seq = SegmentSequence.from_pairs([(A, 5), (B, 5), (C, 5)])
        assert len(make_rnn_examples(seq, 15, 1.0, np.random.default_rng(0), 3)) == 2

    def test_single_segment_gives_nothing(self):
        seq = SegmentSequence.from_pairs([(A, 5)])
        assert make_rnn_examples(seq, 5, 1.0, np.random.default_rng(0), 3) == []

    def test_hand_built_example(self):
        seq = SegmentSequence.from_pairs([(A, 4), (B, 6)])
        [(tokens, target)] = make_rnn_examples(seq, 10, 1.0, ScriptedRng([2, 3]), 3)
        assert [(t.normalized_length, t.label) for t in tokens] == [pytest.approx((0.2, A))]
        assert target.remaining_length == pytest.approx(0.2)
        assert target.next_length == pytest.approx(0.3)
        assert target.next_label == B

    def test_split_points_stay_inside_segments(self):
        seq = SegmentSequence.from_pairs([(A, 7), (B, 3), (A, 9), (C, 4)])
        for tokens, target in make_rnn_examples(seq, 23, 23.0, np.random.default_rng(5), 3):
            assert target.remaining_length > 0
            assert target.next_length > 0
            assert tokens[-1].normalized_length > 0


class TestLoss:
    def test_perfect(self):
        pred = RnnPrediction(0.2, 0.3, np.array([0.0, 1.0]))
        assert rnn_loss(pred, RnnTarget(0.2, 0.3, 1)) == pytest.approx(0.0)

    def test_half_probability(self):
        pred = RnnPrediction(0.2, 0.3, np.array([0.5, 0.5]))
        assert rnn_loss(pred, RnnTarget(0.2, 0.3, 0)) == pytest.approx(math.log(2))

    def test_formula(self):
        pred = RnnPrediction(0.3, 0.5, np.array([0.25, 0.75]))
        assert rnn_loss(pred, RnnTarget(0.2, 0.3, 0)) == pytest.approx(1.4363, abs=1e-4)

    def test_zero_probability_is_clamped(self):
        pred = RnnPrediction(0.0, 0.1, np.array([0.0, 1.0]))
        assert rnn_loss(pred, RnnTarget(0.0, 0.1, 0)) == pytest.approx(-math.log(1e-12))


class TestForward:
    def test_zero_parameters(self):
        model = constant_model(next_length=0.0)
        model.params["label.b"][...] = 0.0
        tokens = encode_tokens(SegmentSequence.from_pairs([(A, 3), (C, 2)]), 10, 1.0, 3)
        pred = model.forward(tokens)
        assert np.allclose(pred.probabilities, 1 / 3)
        assert pred.remaining_length == 0.0
        assert pred.next_length == 0.0

    def test_label_head_permutation(self):
        config = RnnConfig(hidden_size=6, embed_size=5)
        model = RnnModel.init(3, config, 2.0, np.random.default_rng(3))
        tokens = encode_tokens(SegmentSequence.from_pairs([(A, 3), (B, 2)]), 10, 2.0, 3)
        before = model.forward(tokens).probabilities
        order = [2, 0, 1]
        model.params["label.W"][...] = model.params["label.W"][order]
        model.params["label.b"][...] = model.params["label.b"][order]
        assert np.allclose(model.forward(tokens).probabilities, before[order])

    def test_token_size_checked(self):
        model = constant_model()
        with pytest.raises(InputError):
            model.forward(np.zeros((2, 7)))


class TestRecursion:
    def test_merges_into_single_segment(self):
        model = constant_model(remaining=0.0, next_length=0.5, label=B)
        future = rnn_predict_future(model, SegmentSequence.from_pairs([(A, 10)]), 100, 100)
        assert list(zip(future.labels, future.lengths)) == [(B, 100)]

    def test_short_horizon_continues_ongoing_action(self):
        model = constant_model(remaining=0.3, next_length=0.5, label=B)
        future = rnn_predict_future(model, SegmentSequence.from_pairs([(A, 10)]), 100, 10)
        assert list(zip(future.labels, future.lengths)) == [(A, 10)]

    def test_new_segments_get_at_least_one_frame(self):
        model = constant_model(remaining=0.0, next_length=0.0, label=B)
        model.segments_per_video = 10.0
        future = rnn_predict_future(model, SegmentSequence.from_pairs([(A, 10)]), 100, 3)
        assert future.video_length == 3

    def test_iteration_cap(self):
        model = constant_model(remaining=0.0, next_length=0.0, label=B)
        with pytest.raises(ForecastIncomplete) as info:
            rnn_predict_future(model, SegmentSequence.from_pairs([(A, 10)]), 100, 50)
        assert info.value.partial.video_length == 4

    def test_forecaster_fills_horizon_after_cap(self):
        model = constant_model(remaining=0.0, next_length=0.0, label=B)
        pred = RnnForecaster(model).predict(FrameTimeline([A] * 10), 100, 50)
        assert len(pred) == 50
        assert pred.tolist() == [B] * 50


def tiny_videos():
    return [
        FrameTimeline([A] * 4 + [B] * 6 + [C] * 5),
        FrameTimeline([B] * 3 + [C] * 7 + [A] * 5),
        FrameTimeline([A] * 6 + [C] * 4),
    ]


def test_same_seed_same_parameters():
    config = RnnConfig(hidden_size=6, embed_size=6, epochs=2, seed=11)
    first = train_rnn(tiny_videos(), 3, config).model
    second = train_rnn(tiny_videos(), 3, config).model
    for name in first.params:
        assert np.array_equal(first.params[name], second.params[name])


def test_checkpoint_round_trip(tmp_path):
    model = train_rnn(tiny_videos(), 3, RnnConfig(hidden_size=5, embed_size=4, epochs=1), "h").model
    save_checkpoint(tmp_path / "rnn.ckpt", model.to_checkpoint())
    restored = RnnModel.from_checkpoint(load_checkpoint(tmp_path / "rnn.ckpt", "rnn-v1"))
    tokens = encode_tokens(SegmentSequence.from_pairs([(B, 3)]), 15, model.scale, 3)
    assert np.allclose(restored.forward(tokens).probabilities, model.forward(tokens).probabilities)
    assert restored.scale == model.scale
    assert restored.vocabulary_hash == "h"


def test_single_segment_videos_cannot_train():
    with pytest.raises(InputError):
        train_rnn([FrameTimeline([A] * 5)], 3, RnnConfig(hidden_size=4, embed_size=4, epochs=1))



def test_loss_curve_on_toy_set():
    config = RnnConfig(hidden_size=8, embed_size=8, epochs=25, seed=0)
    result = train_rnn(tiny_videos(), 3, config, resample_splits=False)
    assert_loss_non_increasing(result.losses)


@pytest.fixture(scope="module")
def memorized():
    corpus = generate_synthetic(load_grammar_spec(grammar_json()))
    videos = [v.ground_truth for v in corpus]
    config = RnnConfig(hidden_size=32, embed_size=32, epochs=40, learning_rate=5e-3, seed=0)
    result = train_rnn(videos, len(corpus.vocabulary), config)
    return corpus, result


@pytest.mark.slow
@pytest.mark.timeout(600)
def test_memorizes_deterministic_grammar(memorized):
    corpus, result = memorized
    assert result.losses[-1] < result.losses[0]

    model = result.model
    rng = np.random.default_rng(1)
    hits = total = 0
    for video in corpus:
        seq = segments_from_frames(video.ground_truth)
        examples = make_rnn_examples(seq, seq.video_length, model.scale, rng, model.num_classes)
        for tokens, target in examples:
            hits += model.forward(tokens).next_label == target.next_label
            total += 1
    assert total > 0
    assert hits == total


@pytest.mark.slow
@pytest.mark.timeout(600)
def test_continues_grammar_after_first_action(memorized):
    corpus, result = memorized
    seen = set()
    for video in corpus:
        seq = segments_from_frames(video.ground_truth)
        if seq.labels in seen:
            continue
        seen.add(seq.labels)
        first, last = seq[0], seq[len(seq) - 1]
        # stop halfway through the last action so small length errors cannot drop it
        horizon = seq.video_length - first.length - last.length // 2
        observed = SegmentSequence.from_pairs([(first.label, first.length)])
        future = rnn_predict_future(result.model, observed, seq.video_length, horizon)
        assert future.video_length == horizon
        assert future.labels == seq.labels[1:]
    assert len(seen) == 3

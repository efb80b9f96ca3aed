import logging
import math

import numpy as np
import pytest

from actionforecast.checkpoint import load_checkpoint, save_checkpoint
from actionforecast.cnn import (
    LOSS_XENT,
    CnnConfig,
    CnnForecaster,
    CnnModel,
    SegmentMatrix,
    cnn_forward,
    cnn_loss,
    cnn_predict_future,
    decode_matrix,
    dump_matrix_csv,
    encode_matrix,
    make_cnn_examples,
    row_allocation,
    smooth_output,
    train_cnn,
)
from actionforecast.data import DEMO_GRAMMAR, SplitSpec, generate_synthetic, load_grammar_spec
from actionforecast.evaluation import evaluate_grid
from actionforecast.exceptions import InputError
from actionforecast.timeline import FrameTimeline, SegmentSequence, segments_from_frames

from .conftest import assert_loss_non_increasing, fixed_grammar_json, grammar_json

A, B, C = 0, 1, 2


def zero_model(rows=4, num_classes=3, **config):
    model = CnnModel.init(
        num_classes, CnnConfig(rows=rows, sigma=None, **config), np.random.default_rng(0)
    )
    for value in model.params.values():
        value[...] = 0.0
    return model


class TestEncoding:
    def test_proportional_rows(self):
        assert row_allocation([4, 6], 5) == [2, 3]
        X = encode_matrix(SegmentSequence.from_pairs([(A, 4), (B, 6)]), 5, 3)
        assert X.row_labels().tolist() == [A, A, B, B, B]

    def test_leftover_goes_to_first_largest_remainder(self):
        X = encode_matrix(SegmentSequence.from_pairs([(A, 3), (B, 3), (C, 4)]), 5, 3)
        assert X.row_labels().tolist() == [A, A, B, C, C]

    def test_rows_are_one_hot(self):
        X = encode_matrix(SegmentSequence.from_pairs([(A, 7), (C, 2), (B, 30)]), 16, 3)
        assert np.array_equal(X.values.sum(axis=1), np.ones(16))

    def test_short_segment_keeps_a_row(self):
        alloc = row_allocation([1, 1000], 8)
        assert alloc[0] == 1
        assert sum(alloc) == 8

    def test_too_many_segments(self):
        pairs = [(i % 2, 1) for i in range(5)]
        with pytest.raises(InputError):
            encode_matrix(SegmentSequence.from_pairs(pairs), 4, 3)


class TestDecoding:
    def test_exact_multiple(self):
        Y = encode_matrix(SegmentSequence.from_pairs([(A, 2), (B, 2)]), 4, 3)
        assert decode_matrix(Y, 8).tolist() == [A, A, A, A, B, B, B, B]

    def test_leftover_repeats_last_row(self):
        Y = encode_matrix(SegmentSequence.from_pairs([(A, 2), (B, 2)]), 4, 3)
        assert decode_matrix(Y, 9).tolist() == [A, A, A, A, B, B, B, B, B]

    def test_horizon_shorter_than_rows(self):
        Y = encode_matrix(SegmentSequence.from_pairs([(A, 2), (B, 2)]), 4, 3)
        assert decode_matrix(Y, 3).tolist() == [B, B, B]

    def test_ties_take_lowest_class(self):
        assert decode_matrix(np.full((2, 3), 0.5), 2).tolist() == [A, A]


class TestLoss:
    def test_squared_worst_case(self):
        assert cnn_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == pytest.approx(1.0)

    def test_xent_uniform(self):
        uniform = np.full((4, 5), 0.2)
        target = np.eye(5)[[0, 1, 2, 3]]
        assert cnn_loss(uniform, target, LOSS_XENT) == pytest.approx(math.log(5))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            cnn_loss(np.zeros((2, 3)), np.zeros((3, 3)))


class TestExamples:
    def test_four_pairs(self):
        video = FrameTimeline([A] * 20 + [B] * 20)
        pairs = make_cnn_examples(video, 4, 3)
        assert len(pairs) == 4
        assert all(X.values.shape == (4, 3) and Y.values.shape == (4, 3) for X, Y in pairs)

    def test_constant_video(self):
        for X, Y in make_cnn_examples(FrameTimeline([C] * 40), 4, 3):
            assert np.array_equal(X.values, Y.values)

    def test_future_is_next_half(self):
        video = FrameTimeline([A] * 10 + [B] * 30)
        # 50% observed: frames [0, 20), target frames [20, 40)
        X, Y = make_cnn_examples(video, 4, 3)[3]
        assert X.row_labels().tolist() == [A, A, B, B]
        assert Y.row_labels().tolist() == [B, B, B, B]

    def test_too_short(self):
        with pytest.raises(InputError):
            make_cnn_examples(FrameTimeline([A] * 5), 4, 3)


class TestForward:
    def test_zero_parameters_squared(self):
        X = encode_matrix(SegmentSequence.from_pairs([(A, 1)]), 4, 3)
        assert np.array_equal(cnn_forward(zero_model(), X).values, np.zeros((4, 3)))

    def test_zero_parameters_xent(self):
        X = encode_matrix(SegmentSequence.from_pairs([(A, 1)]), 4, 3)
        Y = cnn_forward(zero_model(loss=LOSS_XENT), X).values
        assert np.allclose(Y, 1.0 / 3)

    def test_output_rows_unit_norm(self):
        model = CnnModel.init(3, CnnConfig(rows=8, hidden_size=32), np.random.default_rng(3))
        X = encode_matrix(SegmentSequence.from_pairs([(A, 3), (B, 5)]), 8, 3)
        Y = cnn_forward(model, X).values
        assert np.allclose(np.linalg.norm(Y, axis=1), 1.0)

    def test_bad_input_shape(self):
        with pytest.raises(InputError):
            zero_model().forward_batch(np.zeros((1, 5, 3)))


def test_smoothing_removes_single_flipped_row():
    Y = np.zeros((30, 2))
    Y[:, 0] = 1.0
    Y[15] = [0.0, 1.0]
    smoothed = smooth_output(Y, 3.0)
    assert smoothed.row_labels().tolist() == [0] * 30


class TestPredictFuture:
    def model_predicting(self, label):
        model = zero_model()
        model.params["output.b"].reshape(4, 3)[:, label] = 1.0
        return model

    def test_truncates_full_span(self):
        observed = SegmentSequence.from_pairs([(A, 6)])
        pred = cnn_predict_future(self.model_predicting(B), observed, 7, 10)
        assert pred.tolist() == [B] * 7

    def test_request_beyond_trained_span(self):
        observed = SegmentSequence.from_pairs([(A, 6)])
        with pytest.raises(InputError):
            cnn_predict_future(self.model_predicting(B), observed, 11, 10)

    def test_too_many_observed_segments(self):
        observed = SegmentSequence.from_pairs([(A, 1), (B, 1), (A, 1), (B, 1), (C, 1)])
        with pytest.raises(InputError):
            cnn_predict_future(self.model_predicting(B), observed, 2, 10)

    def test_forecaster_uses_half_of_video(self):
        forecaster = CnnForecaster(self.model_predicting(C))
        pred = forecaster.predict(FrameTimeline([A] * 20), 100, 30)
        assert pred.tolist() == [C] * 30


def tiny_videos():
    return [
        FrameTimeline([A] * 4 + [B] * 6 + [C] * 5),
        FrameTimeline([B] * 3 + [C] * 7 + [A] * 5),
        FrameTimeline([A] * 6 + [C] * 4),
    ]


def test_same_seed_same_parameters():
    config = CnnConfig(rows=8, epochs=2, batch_size=4, seed=5)
    first = train_cnn(tiny_videos(), 3, config)
    second = train_cnn(tiny_videos(), 3, config)
    assert first.losses == second.losses
    for name in first.model.params:
        assert np.array_equal(first.model.params[name], second.model.params[name])


def test_checkpoint_round_trip(tmp_path):
    model = train_cnn(tiny_videos(), 3, CnnConfig(rows=8, epochs=1), "h").model
    save_checkpoint(tmp_path / "cnn.ckpt", model.to_checkpoint())
    restored = CnnModel.from_checkpoint(load_checkpoint(tmp_path / "cnn.ckpt", "cnn-v1"))
    X = encode_matrix(SegmentSequence.from_pairs([(A, 3), (C, 2)]), 8, 3)
    assert np.allclose(cnn_forward(restored, X).values, cnn_forward(model, X).values)
    assert restored.config == model.config
    assert restored.vocabulary_hash == "h"


def test_dump_matrix_csv(tmp_path, vocab):
    path = tmp_path / "matrix.csv"
    dump_matrix_csv(SegmentMatrix(np.eye(3)), path, vocab)
    lines = path.read_text().splitlines()
    assert lines[0] == "row,A,B,C"
    assert len(lines) == 4



def random_sequence(rng, count, classes, max_len):
    labels = [int(rng.integers(classes))]
    for _ in range(count - 1):
        labels.append((labels[-1] + int(rng.integers(1, classes))) % classes)
    return SegmentSequence.from_pairs(zip(labels, rng.integers(1, max_len + 1, size=count)))


def test_encode_decode_properties():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        rows = int(rng.integers(4, 65))
        classes = int(rng.integers(2, 11))
        count = int(rng.integers(1, rows + 1))
        seq = random_sequence(rng, count, classes, int(rng.integers(1, 200)))
        lengths = np.array(seq.lengths)

        X = encode_matrix(seq, rows, classes).values
        assert X.shape == (rows, classes)
        assert np.array_equal(X.sum(axis=1), np.ones(rows))
        assert set(np.unique(X)) <= {0.0, 1.0}

        alloc = np.array(row_allocation(seq.lengths, rows))
        assert alloc.sum() == rows
        assert alloc.min() >= 1
        assert segments_from_frames(FrameTimeline(X.argmax(axis=1))).lengths == tuple(alloc)
        # one-row minimums can only distort proportions when they overfill the matrix
        if np.maximum(1, lengths * rows // lengths.sum()).sum() <= rows:
            exact = lengths * rows / lengths.sum()
            assert np.all(np.abs(alloc - exact) < 1)

        horizon = int(rng.integers(1, 400))
        assert len(decode_matrix(X, horizon)) == horizon
        k = int(rng.integers(1, 5))
        assert segments_from_frames(decode_matrix(X, rows * k)).lengths == tuple(alloc * k)


class TestShortSpans:
    def model_predicting(self, label):
        model = zero_model()
        model.params["output.b"].reshape(4, 3)[:, label] = 1.0
        return model

    def test_span_shorter_than_rows_is_logged(self, caplog):
        observed = SegmentSequence.from_pairs([(A, 6)])
        with caplog.at_level(logging.WARNING, logger="actionforecast.cnn"):
            pred = cnn_predict_future(self.model_predicting(B), observed, 3, 3)
        assert pred.tolist() == [B] * 3
        assert "shorter than the 4 matrix rows" in caplog.text

    def test_forecaster_logs_once(self, caplog):
        forecaster = CnnForecaster(self.model_predicting(C))
        with caplog.at_level(logging.WARNING, logger="actionforecast.cnn"):
            for _ in range(3):
                assert forecaster.predict(FrameTimeline([A] * 2), 6, 3).tolist() == [C] * 3
        assert caplog.text.count("matrix rows") == 1
        assert forecaster.short_spans == 3

    def test_span_covering_rows_is_silent(self, caplog):
        forecaster = CnnForecaster(self.model_predicting(C))
        with caplog.at_level(logging.WARNING, logger="actionforecast.cnn"):
            forecaster.predict(FrameTimeline([A] * 20), 100, 30)
        assert not caplog.records
        assert forecaster.short_spans == 0

    def test_short_training_videos_are_logged(self, caplog):
        video = FrameTimeline([A] * 5 + [B] * 5)
        with caplog.at_level(logging.WARNING, logger="actionforecast.cnn"):
            train_cnn([video, video], 3, CnnConfig(rows=8, epochs=0, sigma=None))
        assert "2 of 2 training videos are shorter than 16 frames" in caplog.text


@pytest.mark.parametrize(
    "grammar", [grammar_json(), DEMO_GRAMMAR, fixed_grammar_json(jitter=0.3)]
)
def test_synthetic_preset_fits_synthetic_videos(grammar):
    corpus = generate_synthetic(load_grammar_spec(dict(grammar, videos=30)))
    rows = CnnConfig.preset("synthetic").rows
    assert min(len(v.ground_truth) for v in corpus) // 2 >= rows


def test_loss_curve_on_toy_set():
    config = CnnConfig(rows=4, epochs=25, batch_size=12, sigma=None)
    result = train_cnn(tiny_videos(), 3, config)
    assert_loss_non_increasing(result.losses)


@pytest.mark.slow
@pytest.mark.timeout(600)
def test_memorizes_deterministic_grammar():
    corpus = generate_synthetic(load_grammar_spec(fixed_grammar_json(videos=100)))
    videos = [v.ground_truth for v in corpus]
    config = CnnConfig.preset("synthetic", epochs=60, learning_rate=3e-3)
    result = train_cnn(videos, len(corpus.vocabulary), config)
    assert result.losses[-1] < result.losses[0]

    ids = corpus.ids
    report = evaluate_grid(
        CnnForecaster(result.model),
        corpus,
        SplitSpec(ids[:1], ids[1:]),
        alphas=(0.2,),
        betas=(0.5,),
    )
    assert report.moc(0.2, 0.5) >= 0.9
    assert report.mean_predicted_segments(0.2, 0.5) > 1

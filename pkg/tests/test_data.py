import dataclasses

import pytest

from actionforecast.data import (
    Corpus,
    SplitSpec,
    VideoRecord,
    generate_synthetic,
    load_corpus,
    load_corpus_async,
    load_grammar_spec,
    load_split,
    load_vocabulary,
    parse_label_file,
    write_labels,
)
from actionforecast.exceptions import InputError
from actionforecast.timeline import FrameTimeline, segments_from_frames

from .conftest import grammar_json


def write_dataset(tmp_path, files, vocab=("pour_milk", "stir"), decoded=None):
    labels = tmp_path / "labels"
    labels.mkdir()
    for name, lines in files.items():
        (labels / f"{name}.txt").write_text("\n".join(lines) + "\n")
    vocab_file = tmp_path / "vocab.txt"
    vocab_file.write_text("\n".join(vocab) + "\n")
    decoded_dir = None
    if decoded:
        decoded_dir = tmp_path / "decoded"
        decoded_dir.mkdir()
        for name, lines in decoded.items():
            (decoded_dir / f"{name}.txt").write_text("\n".join(lines))
    return labels, vocab_file, decoded_dir


class TestLoading:
    def test_parses_label_names(self, tmp_path):
        labels, vocab, _ = write_dataset(tmp_path, {"v1": ["pour_milk", "pour_milk", "stir"]})
        corpus = load_corpus(labels, vocab)
        assert corpus.ids == ["v1"]
        assert corpus.get("v1").ground_truth.tolist() == [0, 0, 1]

    def test_crlf_and_trailing_blank_lines(self, tmp_path):
        labels, vocab, _ = write_dataset(tmp_path, {})
        (labels / "v1.txt").write_bytes(b"stir\r\nstir\r\npour_milk\r\n\r\n")
        assert load_corpus(labels, vocab).get("v1").ground_truth.tolist() == [1, 1, 0]

    def test_unknown_label_names_file_and_line(self, tmp_path):
        labels, vocab, _ = write_dataset(tmp_path, {"v1": ["stir", "fry"]})
        with pytest.raises(InputError, match=r"v1\.txt:2"):
            load_corpus(labels, vocab)

    def test_empty_label_file(self, tmp_path):
        labels, vocab, _ = write_dataset(tmp_path, {"v1": [""]})
        with pytest.raises(InputError):
            load_corpus(labels, vocab)

    def test_decoded_length_mismatch(self, tmp_path):
        labels, vocab, decoded = write_dataset(
            tmp_path, {"v1": ["stir"] * 6}, decoded={"v1": ["stir"] * 5}
        )
        with pytest.raises(InputError):
            load_corpus(labels, vocab, decoded)

    def test_decoded_attached_by_file_name(self, tmp_path):
        labels, vocab, decoded = write_dataset(
            tmp_path,
            {"v1": ["stir"] * 3, "v2": ["pour_milk"] * 2},
            decoded={"v1": ["pour_milk"] * 3},
        )
        corpus = load_corpus(labels, vocab, decoded)
        assert corpus.get("v1").decoded.tolist() == [0, 0, 0]
        assert corpus.get("v2").decoded is None

    def test_mapping_vocabulary_format(self, tmp_path):
        path = tmp_path / "mapping.txt"
        path.write_text("0 SIL\n1 take_cup\n2 pour_coffee\n")
        assert load_vocabulary(path).names == ("SIL", "take_cup", "pour_coffee")

    def test_mapping_vocabulary_out_of_order(self, tmp_path):
        path = tmp_path / "mapping.txt"
        path.write_text("1 take_cup\n0 SIL\n")
        with pytest.raises(InputError):
            load_vocabulary(path)

    def test_missing_vocabulary_file(self, tmp_path):
        with pytest.raises(InputError, match="not found"):
            load_vocabulary(tmp_path / "nope.txt")

    @pytest.mark.asyncio
    async def test_async_loader_matches_sync(self, dataset_dir):
        sync = load_corpus(dataset_dir["labels"], dataset_dir["vocab"], dataset_dir["decoded"])
        concurrent = await load_corpus_async(
            dataset_dir["labels"], dataset_dir["vocab"], dataset_dir["decoded"]
        )
        assert concurrent.ids == sync.ids
        for a, b in zip(sync, concurrent):
            assert a.ground_truth == b.ground_truth
            assert a.decoded == b.decoded


def test_write_then_parse_is_identity(tmp_path, vocab):
    timeline = FrameTimeline([0, 0, 2, 1, 1, 0])
    path = tmp_path / "out.txt"
    write_labels(path, timeline, vocab, header="seed=1")
    assert path.read_text().startswith("# seed=1\n")
    assert parse_label_file(path, vocab) == timeline


class TestSplits:
    def test_complement_is_training(self, tmp_path, vocab):
        corpus = Corpus(
            vocab,
            tuple(VideoRecord(vid, FrameTimeline([0, 1])) for vid in ("v1", "v2", "v3")),
        )
        split_file = tmp_path / "split.test"
        split_file.write_text("v3\n")
        split = load_split(split_file, corpus)
        assert split.train_ids == ("v1", "v2")
        assert split.test_ids == ("v3",)

    def test_all_ids_leaves_no_training(self, tmp_path, tiny_corpus):
        split_file = tmp_path / "split.test"
        split_file.write_text("\n".join(tiny_corpus.ids))
        with pytest.raises(InputError):
            load_split(split_file, tiny_corpus)

    def test_unknown_id(self, tmp_path, tiny_corpus):
        split_file = tmp_path / "split.test"
        split_file.write_text("vX\n")
        with pytest.raises(InputError, match="vX"):
            load_split(split_file, tiny_corpus)

    def test_label_file_names_accepted(self, tmp_path, tiny_corpus):
        split_file = tmp_path / "split.test"
        split_file.write_text("v2.txt\n")
        assert load_split(split_file, tiny_corpus).test_ids == ("v2",)

    def test_missing_split_file_names_path(self, tmp_path, tiny_corpus):
        with pytest.raises(InputError, match="missing.split"):
            load_split(tmp_path / "missing.split", tiny_corpus)

    def test_overlap_rejected(self):
        with pytest.raises(InputError):
            SplitSpec(("v1", "v2"), ("v2",))


class TestSynthetic:
    def test_degenerate_lengths(self):
        spec = load_grammar_spec(
            {
                "classes": ["A", "B"],
                "sequences": [["A", "B"]],
                "default_length": [3, 3],
                "videos": 1,
            }
        )
        corpus = generate_synthetic(spec)
        assert corpus.videos[0].ground_truth.tolist() == [0, 0, 0, 1, 1, 1]

    def test_same_seed_same_corpus(self, grammar_spec):
        first, second = generate_synthetic(grammar_spec), generate_synthetic(grammar_spec)
        assert [v.ground_truth for v in first] == [v.ground_truth for v in second]

    def test_zero_weight_never_drawn(self):
        data = grammar_json(videos=30)
        data["sequences"][0]["weight"] = 1.0
        data["sequences"][1]["weight"] = 0.0
        data["sequences"][2]["weight"] = 0.0
        corpus = generate_synthetic(load_grammar_spec(data))
        assert all(segments_from_frames(v.ground_truth).labels == (0, 1, 2) for v in corpus)

    def test_labels_follow_grammar_without_noise(self, grammar_spec, synthetic_corpus):
        allowed = {
            tuple(grammar_spec.vocabulary.index(n) for n in seq) for seq in grammar_spec.sequences
        }
        for video in synthetic_corpus:
            assert segments_from_frames(video.ground_truth).labels in allowed

    def test_decoded_labels_keep_length(self):
        corpus = generate_synthetic(load_grammar_spec(grammar_json(videos=10, flip=0.5)))
        for video in corpus:
            assert video.decoded is not None
            assert len(video.decoded) == len(video.ground_truth)

    def test_invalid_specs(self, grammar_spec):
        with pytest.raises(InputError):
            dataclasses.replace(grammar_spec, weights=(0.0, 0.0, 0.0))
        with pytest.raises(InputError):
            dataclasses.replace(grammar_spec, sequences=(("A", "A"),), weights=(1.0,))
        with pytest.raises(InputError):
            load_grammar_spec({"classes": ["A"], "sequences": [["A"]]})

    def test_spec_dict_survives_reload(self, grammar_spec):
        reloaded = load_grammar_spec(grammar_spec.to_dict())
        assert reloaded == grammar_spec

import json

import numpy as np
import pytest

from actionforecast.checkpoint import (
    _PREFIX,
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    check_vocabulary,
    load_checkpoint,
    save_checkpoint,
)
from actionforecast.exceptions import ConsistencyError, InputError


@pytest.fixture
def checkpoint():
    rng = np.random.default_rng(1)
    return Checkpoint(
        architecture="rnn-v1",
        config={"hidden_size": 4, "seed": 7},
        vocabulary_hash="abc123",
        params={"a.W": rng.normal(size=(3, 2)), "a.b": np.zeros(3), "s": np.array([1.5])},
        extra={"num_classes": 2},
    )


def test_round_trip(tmp_path, checkpoint):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, checkpoint)
    loaded = load_checkpoint(path, "rnn-v1")
    assert loaded.config == checkpoint.config
    assert loaded.vocabulary_hash == "abc123"
    assert loaded.extra == {"num_classes": 2}
    assert list(loaded.params) == list(checkpoint.params)
    for name, array in checkpoint.params.items():
        assert np.array_equal(loaded.params[name], array)
        assert loaded.params[name].flags.writeable


def test_equal_models_give_identical_bytes(tmp_path, checkpoint):
    save_checkpoint(tmp_path / "a.ckpt", checkpoint)
    save_checkpoint(tmp_path / "b.ckpt", checkpoint)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_architecture_mismatch(tmp_path, checkpoint):
    save_checkpoint(tmp_path / "m.ckpt", checkpoint)
    with pytest.raises(ConsistencyError):
        load_checkpoint(tmp_path / "m.ckpt", "cnn-v1")


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"0123456789abcdefghijklmnop")
    with pytest.raises(InputError):
        load_checkpoint(path)


def test_truncated(tmp_path, checkpoint):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, checkpoint)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(InputError, match="truncated"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(InputError, match="not found"):
        load_checkpoint(tmp_path / "none.ckpt")


def test_vocabulary_hash_check(checkpoint):
    check_vocabulary(checkpoint, "abc123")
    with pytest.raises(ConsistencyError):
        check_vocabulary(checkpoint, "def456")


def write_raw_checkpoint(path, header):
    header_bytes = json.dumps(header).encode("utf8")
    path.write_bytes(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes)


@pytest.mark.parametrize(
    "header",
    [
        {"config": {}, "vocabulary_hash": "", "params": []},
        {"architecture": "rnn-v1", "config": {}, "vocabulary_hash": ""},
        {"architecture": "rnn-v1", "config": {}, "vocabulary_hash": "", "params": [{"n": 1}]},
        ["not", "a", "header"],
    ],
)
def test_header_missing_fields(tmp_path, header):
    path = tmp_path / "partial.ckpt"
    write_raw_checkpoint(path, header)
    with pytest.raises(InputError, match="missing field"):
        load_checkpoint(path, "rnn-v1")

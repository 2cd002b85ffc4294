import struct

import numpy as np
import pytest

from delicate.checkpoint import (
    MAGIC, CheckpointConfigError, CheckpointError, CheckpointTruncatedError, CheckpointVersionError,
    dumps, load_checkpoint, loads, save_checkpoint,
)
from delicate.model import ModelConfig, encode, init_params


def cfg(**kw):
    args = dict(vocab_size=12, hidden_size=8, num_layers=2, num_heads=2, ffn_size=10, max_seq_len=8, dropout_p=0.1)
    args.update(kw)
    return ModelConfig(**args)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("share", [False, True])
def test_save_load_save_byte_identical(tmp_path, dtype, share):
    c = cfg(share_layers=share)
    p = init_params(c, 4, dtype=dtype)
    save_checkpoint(p, c, tmp_path / "a.ckpt")
    q, c2 = load_checkpoint(tmp_path / "a.ckpt")
    assert c2 == c and q.dtype == dtype
    save_checkpoint(q, c2, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_encode_identical_after_load(tmp_path):
    c = cfg()
    p = init_params(c, 2)
    save_checkpoint(p, c, tmp_path / "m.ckpt")
    q, _ = load_checkpoint(tmp_path / "m.ckpt")
    ids = np.array([[2, 6, 7, 8, 3, 0]])
    np.testing.assert_array_equal(encode(p, c, ids).pooled.data, encode(q, c, ids).pooled.data)


def test_header_layout():
    c = cfg()
    buf = dumps(init_params(c, 0), c)
    assert buf[:4] == MAGIC == b"DLCT"
    assert struct.unpack("<I", buf[4:8]) == (1,)


def test_bad_magic_is_version_error(tmp_path):
    c = cfg()
    buf = bytearray(dumps(init_params(c, 0), c))
    buf[:4] = b"XXXX"
    with pytest.raises(CheckpointVersionError):
        loads(bytes(buf))


def test_unknown_version():
    c = cfg()
    buf = bytearray(dumps(init_params(c, 0), c))
    buf[4:8] = struct.pack("<I", 99)
    with pytest.raises(CheckpointVersionError):
        loads(bytes(buf))


@pytest.mark.parametrize("cut", [6, 40, -1, -100])
def test_truncated(cut):
    c = cfg()
    buf = dumps(init_params(c, 0), c)
    with pytest.raises(CheckpointTruncatedError):
        loads(buf[:cut])


def test_trailing_bytes_rejected():
    c = cfg()
    with pytest.raises(CheckpointError):
        loads(dumps(init_params(c, 0), c) + b"\0")


def test_tied_into_untied_request_is_config_mismatch(tmp_path):
    tied = cfg(share_layers=True)
    save_checkpoint(init_params(tied, 0), tied, tmp_path / "t.ckpt")
    with pytest.raises(CheckpointConfigError, match="share_layers"):
        load_checkpoint(tmp_path / "t.ckpt", expected=cfg(share_layers=False))


def test_failed_save_leaves_old_file(tmp_path):
    c = cfg()
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_params(c, 0), c, path)
    before = path.read_bytes()
    with pytest.raises(Exception):
        save_checkpoint(None, c, path)
    assert path.read_bytes() == before

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slct import formats


def test_header_layout_is_bit_exact():
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    buf = formats.encode(data, formats.MAGIC_VOLUME, 1.5, 0.01)
    assert buf[:4] == b"NVOL"
    assert struct.unpack_from("<I", buf, 4)[0] == 1
    assert struct.unpack_from("<3I", buf, 8) == (2, 3, 4)
    assert struct.unpack_from("<2d", buf, 20) == (1.5, 0.01)
    assert len(buf) == 36 + 24 * 4
    assert np.frombuffer(buf[36:], "<f4")[5] == 5.0


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5)), elements=st.floats(-1e6, 1e6, width=32)),
    st.sampled_from([formats.MAGIC_VOLUME, formats.MAGIC_TRANSIENT]),
)
def test_roundtrip_is_lossless(data, magic):
    buf = formats.encode(data, magic, 2.0, 0.004)
    back, hdr = formats.decode(buf, magic)
    assert back.tobytes() == data.astype("<f4").tobytes()
    assert hdr.dims == data.shape and hdr.wall_size == 2.0
    assert formats.encode(back, magic, hdr.wall_size, hdr.bin_length) == buf


def test_file_roundtrip(tmp_path):
    data = np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32)
    p = tmp_path / "v.nvol"
    formats.write_volume(p, data, 1.0, 0.01)
    back, _ = formats.read_volume(p)
    np.testing.assert_array_equal(back, data)
    assert [f.name for f in tmp_path.iterdir()] == ["v.nvol"]


@pytest.mark.parametrize(
    "mangle, msg",
    [
        (lambda b: b[:10], "too short"),
        (lambda b: b"XXXX" + b[4:], "bad magic"),
        (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
        (lambda b: b[:-4], "payload"),
    ],
)
def test_corrupt_files_rejected(mangle, msg):
    buf = formats.encode(np.zeros((2, 2, 2)), formats.MAGIC_TRANSIENT, 1.0, 0.1)
    with pytest.raises(formats.FormatError, match=msg):
        formats.decode(mangle(buf))


def test_kind_mismatch_rejected(tmp_path):
    p = tmp_path / "t.ntra"
    formats.write_transient(p, np.zeros((2, 2, 2)), 1.0, 0.1)
    with pytest.raises(formats.FormatError, match="expected NVOL"):
        formats.read_volume(p)


def test_pgm16_encoding():
    img = np.array([[0.0, 0.5], [1.0, 2.0]])
    buf = formats.encode_pgm16(img)
    assert buf.startswith(b"P5\n2 2\n65535\n")
    q = formats.decode_pgm(buf)
    np.testing.assert_array_equal(q, [[0, 32768], [65535, 65535]])


def test_mask_roundtrip(tmp_path):
    m = np.random.default_rng(1).uniform(size=(5, 7)) < 0.5
    formats.write_mask(tmp_path / "m.pgm", m)
    np.testing.assert_array_equal(formats.read_mask(tmp_path / "m.pgm"), m)


def test_pgm_with_comment():
    buf = b"P5\n# note\n2 1\n255\n\x00\xff"
    np.testing.assert_array_equal(formats.decode_pgm(buf), [[0, 255]])

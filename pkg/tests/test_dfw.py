"""Tensor layout and DFW container round-trip tests."""

import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facedet.errors import FormatError
from facedet.tensor import dfw_read, dfw_write, flat_offset

def roundtrip(store):
    buf = io.BytesIO()
    dfw_write(store, buf)
    buf.seek(0)
    return dfw_read(buf)


def test_empty_store_is_eight_bytes():
    buf = io.BytesIO()
    n = dfw_write({}, buf)
    assert n == 8
    assert buf.getvalue() == b"DFW1" + struct.pack("<I", 0)


def test_single_scalar_entry_byte_count():
    # "DFW1" + count + (name_len + 1 name byte + rank + 1 dim + 1 value)
    buf = io.BytesIO()
    n = dfw_write({"b": np.array([2.0], dtype=np.float32)}, buf)
    assert n == 8 + (4 + 1 + 4 + 4 + 4) == 25


def test_read_empty():
    assert roundtrip({}) == {}


def test_bad_magic():
    with pytest.raises(FormatError, match="bad magic"):
        dfw_read(io.BytesIO(b"XXXX" + struct.pack("<I", 0)))


def test_truncated_stream_names_offset():
    buf = io.BytesIO()
    dfw_write({"w": np.ones((2, 3, 4), dtype=np.float32)}, buf)
    data = buf.getvalue()
    with pytest.raises(FormatError, match="offset"):
        dfw_read(io.BytesIO(data[:-5]))


def test_dims_product_overflow_rejected():
    buf = io.BytesIO()
    buf.write(b"DFW1" + struct.pack("<I", 1))
    buf.write(struct.pack("<I", 1) + b"w")
    buf.write(struct.pack("<I", 3) + struct.pack("<3I", 2**31, 2**31, 4))
    buf.seek(0)
    with pytest.raises(FormatError, match="overflow"):
        dfw_read(buf)


def test_five_random_tensors_bit_exact():
    rng = np.random.default_rng(0)
    store = {
        f"t{k}": rng.standard_normal(
            tuple(rng.integers(1, 6, size=rng.integers(1, 4)))
        ).astype(np.float32)
        for k in range(5)
    }
    back = roundtrip(store)
    assert list(back) == list(store)
    for name in store:
        assert back[name].dtype == np.float32
        assert np.array_equal(back[name], store[name])


@st.composite
def stores(draw):
    names = draw(st.lists(st.text(min_size=1, max_size=8), min_size=0,
                          max_size=5, unique=True))
    out = {}
    for idx, name in enumerate(names):
        shape = tuple(draw(st.lists(st.integers(1, 4), min_size=1, max_size=3)))
        rng = np.random.default_rng(idx)
        out[name] = rng.standard_normal(shape).astype(np.float32)
    return out


@settings(max_examples=50, deadline=None)
@given(stores())
def test_roundtrip_property(store):
    back = roundtrip(store)
    assert list(back) == list(store)
    for name in store:
        assert np.array_equal(back[name], store[name])


def test_flat_offset_matches_numpy_layout():
    h, w, c = 3, 4, 5
    t = np.arange(h * w * c, dtype=np.float32).reshape(h, w, c)
    flat = t.ravel()
    for r in range(h):
        for col in range(w):
            for k in range(c):
                assert flat[flat_offset(r, col, k, w, c)] == t[r, col, k]

"""Model container format: roundtrip fidelity and corruption handling."""

import json
import struct

import numpy as np
import pytest

from scoredeck.container import FORMAT_VERSION, MAGIC, read_container, write_container
from scoredeck.errors import FormatError, VersionError


@pytest.fixture
def sample(tmp_path):
    path = tmp_path / "m.scdk"
    arrays = {
        "weights": np.arange(12.0).reshape(3, 4),
        "bias": np.array([1.5, -2.5]),
        "scalar": np.array(7.0),
    }
    header = {"cfg": {"b": 4, "pooling": "attention"}, "note": "sample"}
    write_container(path, "bilstm", header, arrays)
    return path, arrays, header


def test_roundtrip(sample):
    path, arrays, header = sample
    kind, got_header, got_arrays = read_container(path)
    assert kind == "bilstm"
    assert got_header == header
    assert set(got_arrays) == set(arrays)
    for name, arr in arrays.items():
        assert got_arrays[name].shape == arr.shape
        assert np.array_equal(got_arrays[name], arr)
        assert got_arrays[name].dtype == np.float64


def test_write_is_byte_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {f"a{i}": rng.normal(size=(i + 1, 3)) for i in range(4)}
    p1, p2 = tmp_path / "one", tmp_path / "two"
    write_container(p1, "forest", {"z": 1, "a": 2}, arrays)
    write_container(p2, "forest", {"a": 2, "z": 1}, dict(reversed(list(arrays.items()))))
    assert p1.read_bytes() == p2.read_bytes()


def test_casts_input_dtypes(tmp_path):
    path = tmp_path / "m"
    write_container(path, "k", {}, {"x": np.array([1, 2, 3], dtype=np.int32)})
    _, _, arrays = read_container(path)
    assert arrays["x"].dtype == np.float64
    assert np.array_equal(arrays["x"], [1.0, 2.0, 3.0])


def test_returned_arrays_are_writable(sample):
    _, _, arrays = read_container(sample[0])
    arrays["bias"][0] = 99.0  # must not raise (no view into the read buffer)


def test_bad_magic(tmp_path, sample):
    path = tmp_path / "bad"
    path.write_bytes(b"NOPE" + sample[0].read_bytes()[4:])
    with pytest.raises(FormatError):
        read_container(path)


def test_too_short(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(MAGIC + b"\x01")
    with pytest.raises(FormatError):
        read_container(path)


def test_wrong_version(tmp_path, sample):
    raw = bytearray(sample[0].read_bytes())
    raw[4:6] = struct.pack("<H", FORMAT_VERSION + 1)
    path = tmp_path / "vers"
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        read_container(path)


def test_truncated_header(tmp_path, sample):
    raw = sample[0].read_bytes()
    header_len = struct.unpack("<Q", raw[6:14])[0]
    path = tmp_path / "trunc"
    path.write_bytes(raw[: 14 + header_len // 2])
    with pytest.raises(FormatError):
        read_container(path)


def test_truncated_array_body(tmp_path, sample):
    raw = sample[0].read_bytes()
    path = tmp_path / "body"
    path.write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="truncated array"):
        read_container(path)


def test_garbage_header_json(tmp_path):
    garbage = b"{not json"
    path = tmp_path / "junk"
    path.write_bytes(
        MAGIC + struct.pack("<H", FORMAT_VERSION) + struct.pack("<Q", len(garbage)) + garbage
    )
    with pytest.raises(FormatError, match="unreadable header"):
        read_container(path)


def test_empty_arrays_ok(tmp_path):
    path = tmp_path / "hdr_only"
    write_container(path, "meta", {"only": "header"}, {})
    kind, header, arrays = read_container(path)
    assert kind == "meta"
    assert header == {"only": "header"}
    assert arrays == {}


def test_header_survives_unicode(tmp_path):
    path = tmp_path / "uni"
    write_container(path, "k", {"label": "café — β"}, {})
    _, header, _ = read_container(path)
    assert header["label"] == "café — β"

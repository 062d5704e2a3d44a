"""Writer output is parsed by the quantization toolkit's reader.

The container format is the interface between the two packages, so every
test here reads exporter-written bytes back through pbq.tensorio.
"""

import struct

import numpy as np
import pytest
from pbq.tensorio import ContainerFormatError, container_from_bytes, read_container

from pbq_exporter.container import MAGIC, VERSION, container_bytes, entry_bytes


def test_single_f32_tensor_exact_bytes():
    arr = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    expected = MAGIC
    expected += struct.pack("<II", VERSION, 1)
    expected += struct.pack("<H", 1) + b"a"
    expected += struct.pack("<BB", 1, 2)
    expected += struct.pack("<QQ", 1, 3)
    expected += struct.pack("<Q", 12)
    expected += arr.tobytes()
    expected += b"\x00" * 4
    assert container_bytes([("a", arr)]) == expected


def test_empty_container_is_bare_header():
    blob = container_bytes([])
    assert blob == MAGIC + struct.pack("<II", VERSION, 0)
    assert container_from_bytes(blob).names() == []


@pytest.mark.parametrize(
    "arr",
    [
        np.array([[1.5, -2.25], [0.0, 8.0]], dtype=np.float64),
        np.array([[1.5, -2.25], [0.0, 8.0]], dtype=np.float32),
        np.array([[0, 255], [7, 128]], dtype=np.uint8),
        np.array([[2**63, 1], [0, 2**64 - 1]], dtype=np.uint64),
    ],
)
def test_each_dtype_reads_back_identically(arr):
    parsed = container_from_bytes(container_bytes([("t", arr)]))
    got = parsed.get("t")
    assert got.dtype == arr.dtype
    np.testing.assert_array_equal(got, arr)


def test_mixed_entries_preserve_order_and_values():
    entries = [
        ("layer.weight", np.arange(6, dtype=np.float32).reshape(2, 3)),
        ("layer.acts", np.linspace(-1.0, 1.0, 12, dtype=np.float32).reshape(3, 4)),
        ("meta", np.array([2, 3, 0, 8], dtype=np.uint64)),
    ]
    parsed = container_from_bytes(container_bytes(entries))
    assert parsed.names() == ["layer.weight", "layer.acts", "meta"]
    for name, arr in entries:
        np.testing.assert_array_equal(parsed.get(name), arr)


def test_file_round_trip_through_reader(tmp_path):
    path = tmp_path / "out.pbtc"
    arr = np.random.default_rng(3).normal(size=(5, 7)).astype(np.float32)
    path.write_bytes(container_bytes([("w", arr)]))
    np.testing.assert_array_equal(read_container(str(path)).get("w"), arr)


def test_odd_payload_is_padded_to_words():
    arr = np.ones((1, 3), dtype=np.uint8)
    blob = container_bytes([("odd", arr)])
    assert blob.endswith(b"\x01\x01\x01" + b"\x00" * 5)
    np.testing.assert_array_equal(container_from_bytes(blob).get("odd"), arr)


def test_big_endian_input_writes_little_endian_payload():
    little = np.array([[1.0, -3.5]], dtype="<f4")
    big = little.astype(">f4")
    assert container_bytes([("t", big)]) == container_bytes([("t", little)])


def test_non_contiguous_input_serializes_row_major():
    base = np.arange(12, dtype=np.float32).reshape(3, 4)
    view = base[:, ::2]
    parsed = container_from_bytes(container_bytes([("v", view)]))
    np.testing.assert_array_equal(parsed.get("v"), np.ascontiguousarray(view))


def test_utf8_names_survive():
    arr = np.zeros((1, 1), dtype=np.float32)
    name = "capa.étage.weight"
    parsed = container_from_bytes(container_bytes([(name, arr)]))
    assert parsed.names() == [name]


def test_duplicate_names_rejected():
    arr = np.zeros((1, 1), dtype=np.float32)
    with pytest.raises(ValueError, match="duplicate"):
        container_bytes([("t", arr), ("t", arr)])


def test_empty_name_rejected():
    with pytest.raises(ValueError, match="name"):
        entry_bytes("", np.zeros((1, 1), dtype=np.float32))


@pytest.mark.parametrize("dtype", [np.int32, np.int64, np.float16, np.complex128])
def test_unsupported_dtypes_rejected(dtype):
    with pytest.raises(ValueError, match="unsupported dtype"):
        entry_bytes("t", np.zeros((2, 2), dtype=dtype))


def test_reader_rejects_truncated_writer_output():
    blob = container_bytes([("t", np.ones((2, 2), dtype=np.float32))])
    with pytest.raises(ContainerFormatError):
        container_from_bytes(blob[:-5])

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from npcluster import (
    EmbeddingMatrix,
    FeatureMatrix,
    FormatError,
    LabelVector,
    PreconditionError,
    read_embedding,
    read_features,
    read_labels,
    relabel_contiguous,
    write_embedding,
    write_features,
    write_labels,
)
from npcluster.data import FMAT_MAGIC


def test_binary_header_roundtrip(tmp_path):
    path = tmp_path / "f.fmat"
    matrix = FeatureMatrix(np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32))
    write_features(matrix, None, path)
    back, labels = read_features(path)
    assert labels is None
    assert back.n == 2 and back.d == 3
    np.testing.assert_array_equal(back.values, [[1, 2, 3], [4, 5, 6]])


def test_binary_layout_is_fixed(tmp_path):
    path = tmp_path / "f.fmat"
    matrix = FeatureMatrix(np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32))
    write_features(matrix, None, path)
    raw = path.read_bytes()
    magic, version, n, d, has_labels = struct.unpack_from("<8sIQIB", raw, 0)
    assert magic == FMAT_MAGIC == b"FEATMAT1"
    assert (version, n, d, has_labels) == (1, 2, 3, 0)
    payload = np.frombuffer(raw, dtype="<f4", count=6, offset=25)
    np.testing.assert_array_equal(payload, [1, 2, 3, 4, 5, 6])


def test_csv_with_label_column(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("1.0,2.0,0\n3.0,4.0,1\n")
    matrix, labels = read_features(path, format="csv", label_column=True)
    assert matrix.n == 2 and matrix.d == 2
    np.testing.assert_array_equal(labels.labels, [0, 1])


def test_nan_rejected_with_location(tmp_path):
    path = tmp_path / "f.fmat"
    values = np.array([[1.0, np.nan]], dtype=np.float32)
    header = struct.pack("<8sIQIB", FMAT_MAGIC, 1, 1, 2, 0)
    path.write_bytes(header + values.tobytes())
    with pytest.raises(FormatError, match="non-finite value.*byte"):
        read_features(path)
    path2 = tmp_path / "f.csv"
    path2.write_text("1.0,nan\n")
    with pytest.raises(FormatError, match="non-finite"):
        read_features(path2, format="csv")


def test_truncated_file_reports_size(tmp_path):
    path = tmp_path / "f.fmat"
    matrix = FeatureMatrix(np.ones((2, 2), dtype=np.float32))
    write_features(matrix, None, path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError, match="truncated"):
        read_features(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "f.fmat"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 20)
    with pytest.raises(FormatError, match="bad magic"):
        read_features(path)


def test_single_cell_roundtrip(tmp_path):
    path = tmp_path / "f.fmat"
    write_features(FeatureMatrix(np.array([[0.0]], dtype=np.float32)), None, path)
    back, _ = read_features(path)
    assert back.values.shape == (1, 1)
    assert back.values[0, 0] == 0.0


def test_roundtrip_with_labels(tmp_path):
    path = tmp_path / "f.fmat"
    matrix = FeatureMatrix(np.arange(6, dtype=np.float32).reshape(2, 3))
    labels = LabelVector(np.array([3, 7]))
    write_features(matrix, labels, path)
    back, back_labels = read_features(path)
    np.testing.assert_array_equal(back.values, matrix.values)
    np.testing.assert_array_equal(back_labels.labels, [3, 7])


def test_csv_roundtrip_tolerance(tmp_path):
    path = tmp_path / "f.csv"
    matrix = FeatureMatrix(np.array([[1.25, -2.5], [0.1, 3.3], [9.0, 1e-4]],
                                    dtype=np.float32))
    write_features(matrix, None, path, format="csv")
    back, _ = read_features(path, format="csv")
    np.testing.assert_allclose(back.values, matrix.values, atol=1e-6)


def test_label_count_mismatch(tmp_path):
    matrix = FeatureMatrix(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(PreconditionError, match="label count"):
        write_features(matrix, LabelVector(np.array([1])), tmp_path / "x.fmat")


def test_embedding_binary_is_float64(tmp_path):
    path = tmp_path / "e.emat"
    values = np.array([[0.1234567890123456, -1.0], [2.0, 3.0]])
    emb = EmbeddingMatrix(values)
    write_embedding(emb, None, path)
    back, _ = read_embedding(path)
    assert back.values.dtype == np.float64
    np.testing.assert_array_equal(back.values, values)


def test_label_file_roundtrip(tmp_path):
    path = tmp_path / "labels.txt"
    labels = LabelVector(np.array([0, 2, 2, 5]))
    write_labels(labels, path)
    back = read_labels(path)
    np.testing.assert_array_equal(back.labels, labels.labels)
    path.write_text("1\nx\n")
    with pytest.raises(FormatError, match=":2"):
        read_labels(path)


def test_relabel_examples():
    relabeled, k = relabel_contiguous(np.array([5, 5, 9]))
    np.testing.assert_array_equal(relabeled.labels, [0, 0, 1])
    assert k == 2
    relabeled, k = relabel_contiguous(np.array([0, 1, 2]))
    np.testing.assert_array_equal(relabeled.labels, [0, 1, 2])
    assert k == 3
    with pytest.raises(PreconditionError):
        relabel_contiguous(np.array([], dtype=np.int64))


def test_relabel_first_occurrence_order():
    relabeled, k = relabel_contiguous(np.array([9, 4, 9, 1]))
    np.testing.assert_array_equal(relabeled.labels, [0, 1, 0, 2])
    assert k == 3


def test_matrix_invariants():
    with pytest.raises(PreconditionError):
        FeatureMatrix(np.empty((0, 3), dtype=np.float32))
    with pytest.raises(PreconditionError, match="non-finite"):
        FeatureMatrix(np.array([[np.inf]], dtype=np.float32))
    with pytest.raises(PreconditionError, match="negative"):
        LabelVector(np.array([0, -1]))


def test_values_are_immutable():
    matrix = FeatureMatrix(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        matrix.values[0, 0] = 3.0


@settings(max_examples=50, deadline=None)
@given(
    arrays(
        np.float32,
        st.tuples(st.integers(1, 8), st.integers(1, 6)),
        elements=st.floats(
            np.float32(-1e18), np.float32(1e18), width=32,
            allow_nan=False, allow_infinity=False,
        ),
    ),
    st.booleans(),
)
def test_binary_roundtrip_bit_exact(tmp_path_factory, values, with_labels):
    path = tmp_path_factory.mktemp("rt") / "f.fmat"
    matrix = FeatureMatrix(values)
    labels = None
    if with_labels:
        labels = LabelVector(np.arange(matrix.n) % 3)
    write_features(matrix, labels, path)
    back, back_labels = read_features(path)
    assert back.values.tobytes() == matrix.values.tobytes()
    if with_labels:
        np.testing.assert_array_equal(back_labels.labels, labels.labels)
    else:
        assert back_labels is None


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=1, max_size=40))
def test_relabel_preserves_partition(raw):
    arr = np.asarray(raw)
    relabeled, k = relabel_contiguous(arr)
    out = relabeled.labels
    assert k == len(set(raw))
    for i in range(len(raw)):
        for j in range(len(raw)):
            assert (arr[i] == arr[j]) == (out[i] == out[j])
    assert sorted(set(out.tolist())) == list(range(k))

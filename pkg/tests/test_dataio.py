import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deep_vecchia import dataio
from deep_vecchia.dataio import (
    BadMagicError,
    Checkpoint,
    MissingSiblingError,
    NonFiniteError,
    SchemaVersionError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    load_checkpoint,
    read_matrix,
    save_checkpoint,
    write_matrix,
)


def test_header_arithmetic_1x1(tmp_path):
    # 17-byte header (4 magic + 4 version + 1 dtype + 4 rows + 4 cols) + one float64
    path = tmp_path / "m.dveb"
    write_matrix(np.array([[0.0]]), path)
    assert path.stat().st_size == 17 + 8 == 25


def test_header_arithmetic_2x3(tmp_path):
    path = tmp_path / "m.dveb"
    write_matrix(np.arange(6.0).reshape(2, 3), path)
    assert path.stat().st_size == 17 + 48


def test_write_read_inverse(tmp_path):
    m = np.array([[1.5, -2.25], [3.0, 4.125]])
    path = tmp_path / "m.dveb"
    write_matrix(m, path)
    back = read_matrix(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, m)


@settings(max_examples=60, deadline=None)
@given(
    arrays(
        np.float64,
        st.tuples(st.integers(0, 12), st.integers(1, 12)),
        elements=st.floats(-1e12, 1e12, allow_nan=False, allow_infinity=False),
    )
)
def test_roundtrip_bit_exact(tmp_path_factory, m):
    path = tmp_path_factory.mktemp("rt") / "m.dveb"
    write_matrix(m, path)
    assert np.array_equal(read_matrix(path), m)


def test_roundtrip_many_random_matrices(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "m.dveb"
    for _ in range(1000):
        r, c = rng.integers(1, 8, size=2)
        m = rng.standard_normal((r, c)) * 10.0 ** rng.integers(-6, 6)
        write_matrix(m, path)
        back = read_matrix(path)
        assert back.tobytes() == m.tobytes()


def test_csv_parse(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("1.5,2.0\n3.0,4.0\n")
    assert np.array_equal(read_matrix(path), np.array([[1.5, 2.0], [3.0, 4.0]]))


def test_bad_magic(tmp_path):
    path = tmp_path / "m.dveb"
    write_matrix(np.ones((1, 1)), path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        read_matrix(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "m.dveb"
    write_matrix(np.ones((1, 1)), path)
    blob = bytearray(path.read_bytes())
    blob[4] = 9
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersionError):
        read_matrix(path)


def test_unsupported_dtype(tmp_path):
    path = tmp_path / "m.dveb"
    write_matrix(np.ones((1, 1)), path)
    blob = bytearray(path.read_bytes())
    blob[8] = 1
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedDtypeError):
        read_matrix(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "m.dveb"
    write_matrix(np.ones((2, 2)), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(TruncatedPayloadError):
        read_matrix(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "m.dveb"
    write_matrix(np.ones((2, 2)), path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(TruncatedPayloadError):
        read_matrix(path)


def test_non_finite_rejected(tmp_path):
    path = tmp_path / "m.dveb"
    m = np.ones((2, 2))
    write_matrix(m, path)
    blob = bytearray(path.read_bytes())
    blob[17 : 17 + 8] = np.array([np.nan]).tobytes()
    path.write_bytes(bytes(blob))
    with pytest.raises(NonFiniteError):
        read_matrix(path)


def test_checkpoint_roundtrip(tmp_path):
    c = Checkpoint(
        meta={"alpha": 1.5, "name": "demo", "nested": {"b": [1, 2, 3]}},
        arrays={"w": np.arange(6.0).reshape(2, 3), "y": np.ones((4, 1))},
    )
    save_checkpoint(c, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    assert back.meta == c.meta
    assert set(back.arrays) == {"w", "y"}
    assert np.array_equal(back.arrays["w"], c.arrays["w"])


def test_checkpoint_save_deterministic(tmp_path):
    c = Checkpoint(meta={"z": 1, "a": [0.1, 0.2]}, arrays={"m": np.eye(3)})
    save_checkpoint(c, tmp_path / "a")
    save_checkpoint(c, tmp_path / "b")
    assert (tmp_path / "a/meta.json").read_bytes() == (tmp_path / "b/meta.json").read_bytes()
    assert (tmp_path / "a/m.dveb").read_bytes() == (tmp_path / "b/m.dveb").read_bytes()


def test_checkpoint_missing_sibling(tmp_path):
    c = Checkpoint(meta={}, arrays={"m": np.eye(2)})
    save_checkpoint(c, tmp_path / "ck")
    (tmp_path / "ck/m.dveb").unlink()
    with pytest.raises(MissingSiblingError):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_schema_version(tmp_path):
    c = Checkpoint(meta={}, arrays={})
    save_checkpoint(c, tmp_path / "ck")
    text = (tmp_path / "ck/meta.json").read_text().replace('"format_version": 1', '"format_version": 99')
    (tmp_path / "ck/meta.json").write_text(text)
    with pytest.raises(SchemaVersionError):
        load_checkpoint(tmp_path / "ck")


def test_vector_helpers():
    v = np.array([1.0, 2.0, 3.0])
    col = dataio.as_column(v)
    assert col.shape == (3, 1)
    assert np.array_equal(dataio.as_vector(col), v)

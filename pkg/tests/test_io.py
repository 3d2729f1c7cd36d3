import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from precipeval import (
    HR_GEOMETRY,
    LR_GEOMETRY,
    build_index,
    read_pair,
    read_sequences,
    write_pair,
    write_sequences,
)
from precipeval.errors import (
    CorruptFile,
    DimensionMismatch,
    DuplicateMonth,
    IoFailure,
    LayoutMismatch,
    NegativeValue,
    TooShort,
    UnparseableName,
)
from precipeval.io_container import PAIR_OVERHEAD_BYTES, RnbChecksum, rnb_checksum
from precipeval.synth import EventConfig, SensorConfig, degrade, generate_event

from conftest import build_corpus, make_sequence


@pytest.fixture
def pair(tmp_path):
    hr, _ = generate_event(EventConfig(template="squall", n_frames=5), seed=4)
    lr = degrade(hr, SensorConfig(), factor=3)
    path = tmp_path / "pair.rnb"
    write_pair(path, hr, lr)
    return path, hr, lr


def test_round_trip_bit_exact(pair):
    path, hr, lr = pair
    hr2, lr2 = read_pair(path)
    assert hr2.geometry == hr.geometry and lr2.geometry == lr.geometry
    assert hr2.timestamps == hr.timestamps
    for a, b in zip(list(hr) + list(lr), list(hr2) + list(lr2)):
        assert np.array_equal(a.values, b.values)
        assert b.values.dtype == np.float32


def test_file_size_arithmetic(pair):
    path, hr, lr = pair
    payload = sum(len(s) * s.geometry.rows * s.geometry.cols * 4 for s in (hr, lr))
    assert path.stat().st_size == PAIR_OVERHEAD_BYTES + payload


def test_corrupt_payload_byte_detected(pair):
    path, _, _ = pair
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptFile):
        read_pair(path)


def test_truncated_file_detected(pair):
    path, _, _ = pair
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptFile):
        read_pair(path)


def test_trailing_garbage_detected(pair):
    path, _, _ = pair
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(CorruptFile):
        read_pair(path)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.rnb"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CorruptFile):
        read_sequences(p)


def test_checksum_streaming_matches_one_shot(rng):
    data = rng.integers(0, 256, size=1001, dtype=np.uint8).tobytes()
    one = rnb_checksum(data)
    cs = RnbChecksum()
    for start in range(0, len(data), 37):
        cs.update(data[start : start + 37])
    assert cs.digest() == one
    assert rnb_checksum(data + b"\x00") != one  # length is folded in


@given(st.binary(max_size=400), st.lists(st.integers(1, 64), max_size=12))
@settings(max_examples=100, deadline=None)
def test_checksum_invariant_under_chunking(data, cuts):
    cs = RnbChecksum()
    pos = 0
    for size in cuts:
        cs.update(data[pos : pos + size])
        pos += size
    cs.update(data[pos:])
    assert cs.digest() == rnb_checksum(data)


@given(
    st.lists(
        st.floats(min_value=0, max_value=3.0000000054977558e38, allow_nan=False, width=32),
        min_size=6,
        max_size=6,
    )
)
@settings(max_examples=60, deadline=None)
def test_round_trip_any_float32_values(tmp_path_factory, values):
    seq = make_sequence(np.array(values, dtype=np.float32).reshape(1, 2, 3))
    path = tmp_path_factory.mktemp("rt") / "seq.rnb"
    write_sequences(path, [seq])
    back = read_sequences(path)[0]
    assert np.array_equal(back[0].values, seq[0].values)


def test_negative_values_and_sentinel(tmp_path):
    seq = make_sequence(np.full((2, 3, 3), 1.0, dtype=np.float32))
    p = tmp_path / "neg.rnb"
    write_sequences(p, [seq])
    raw = bytearray(p.read_bytes())
    # overwrite one payload float with the sentinel, then fix the checksum
    body_start = 8 + 28
    import struct

    struct.pack_into("<f", raw, body_start + 4 * 3, -999.0)
    digest = rnb_checksum(bytes(raw[:-8]))
    struct.pack_into("<Q", raw, len(raw) - 8, digest)
    p.write_bytes(bytes(raw))
    with pytest.raises(NegativeValue):
        read_sequences(p)
    seqs = read_sequences(p, sentinel=-999.0)
    assert float(seqs[0][0].values[1, 0]) == 0.0


def test_write_pair_validation(tmp_path):
    hr = make_sequence(np.zeros((3, 6, 6)))
    lr = make_sequence(np.zeros((2, 2, 2)))
    with pytest.raises(DimensionMismatch):
        write_pair(tmp_path / "x.rnb", hr, lr)
    with pytest.raises(TooShort):
        write_sequences(tmp_path / "y.rnb", [])
    with pytest.raises(LayoutMismatch):
        write_pair(tmp_path / "z.rnb", hr, hr, format="netcdf")


def test_read_pair_requires_two_sequences(tmp_path):
    seq = make_sequence(np.zeros((2, 4, 4)))
    p = tmp_path / "one.rnb"
    write_sequences(p, [seq])
    assert len(read_sequences(p)) == 1
    with pytest.raises(LayoutMismatch):
        read_pair(p)


# -- hdf5 --------------------------------------------------------------------


def _write_hdf5(path, t=2, hr_shape=None, lr_shape=None, hr_name="hr", lr_name="lr"):
    import h5py

    hr_shape = hr_shape or (t, HR_GEOMETRY.rows, HR_GEOMETRY.cols)
    lr_shape = lr_shape or (t, LR_GEOMETRY.rows, LR_GEOMETRY.cols)
    rng = np.random.default_rng(0)
    with h5py.File(path, "w") as fh:
        fh.create_dataset(hr_name, data=rng.random(hr_shape).astype(np.float32))
        fh.create_dataset(lr_name, data=rng.random(lr_shape).astype(np.float32))


def test_hdf5_native_layout(tmp_path):
    p = tmp_path / "2002-07.h5"
    _write_hdf5(p)
    hr, lr = read_pair(p, source="hdf5")
    assert hr.geometry == HR_GEOMETRY
    assert lr.geometry == LR_GEOMETRY
    assert len(hr) == len(lr) == 2
    assert hr.timestamps == (0, 1)


def test_hdf5_wrong_cols_rejected(tmp_path):
    p = tmp_path / "bad.h5"
    _write_hdf5(p, hr_shape=(2, HR_GEOMETRY.rows, HR_GEOMETRY.cols - 1))
    with pytest.raises(LayoutMismatch):
        read_pair(p, source="hdf5")


def test_hdf5_custom_dataset_names(tmp_path):
    p = tmp_path / "named.h5"
    _write_hdf5(p, hr_name="stage4", lr_name="nldas")
    with pytest.raises(LayoutMismatch):
        read_pair(p, source="hdf5")
    hr, _ = read_pair(p, source="hdf5", hdf5_hr_name="stage4", hdf5_lr_name="nldas")
    assert hr.geometry == HR_GEOMETRY


# -- index -------------------------------------------------------------------


def test_build_index_groups_by_year(tmp_path):
    root = build_corpus(tmp_path / "corpus", years=(2001, 2002, 2003), months=(7, 8), n_frames=4)
    index = build_index(root)
    assert index.years() == [2001, 2002, 2003]
    assert len(index.entries) == 6
    assert [e.month for e in index.for_year(2002)] == [7, 8]
    assert all(e.frame_count == 4 for e in index.entries)
    assert all(e.checksum != 0 for e in index.entries)
    # deterministic: a second scan yields the identical index
    assert build_index(root) == index


def test_build_index_85_months(tmp_path):
    root = tmp_path / "full"
    root.mkdir()
    hr = make_sequence(np.zeros((1, 6, 6), dtype=np.float32))
    lr = make_sequence(np.zeros((1, 2, 2), dtype=np.float32), pixel_size_km=12.0)
    for year in range(2002, 2019):
        for month in range(7, 12):
            write_pair(root / f"{year}-{month:02d}.rnb", hr, lr)
    index = build_index(root)
    assert len(index.entries) == 85
    assert len(index.years()) == 17
    assert index.years()[0] == 2002 and index.years()[-1] == 2018


def test_build_index_duplicate_month(tmp_path):
    root = build_corpus(tmp_path / "dup", years=(2010,), months=(9,), n_frames=3)
    _write_hdf5(root / "2010-09.h5")
    with pytest.raises(DuplicateMonth):
        build_index(root)


def test_build_index_unparseable_name(tmp_path):
    root = build_corpus(tmp_path / "weird", years=(2010, 2011), months=(9,), n_frames=3)
    (root / "sept-2010.rnb").write_bytes(b"RNB1")
    with pytest.raises(UnparseableName):
        build_index(root)


def test_build_index_empty_dir(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(IoFailure):
        build_index(empty)
    with pytest.raises(IoFailure):
        build_index(tmp_path / "missing")


def test_build_index_mixed_geometry_rejected(tmp_path):
    root = build_corpus(tmp_path / "mixed", years=(2001, 2002), months=(7,), n_frames=3)
    other_hr = make_sequence(np.zeros((3, 12, 12), dtype=np.float32))
    other_lr = make_sequence(np.zeros((3, 4, 4), dtype=np.float32), pixel_size_km=12.0)
    write_pair(root / "2003-07.rnb", other_hr, other_lr)
    with pytest.raises(LayoutMismatch):
        build_index(root)

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heraldsim.errors import BadMagic, IoFailure, TruncatedRecord, VersionUnsupported
from heraldsim.tagstream import (
    HEADER_SIZE,
    MAGIC,
    RECORD_DTYPE,
    RECORD_SIZE,
    TagStream,
    TimeTag,
    array_to_tags,
    read_header,
    read_tags,
    read_tagstream,
    tags_to_array,
    write_tagstream,
)


def sample_records(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    rec = np.zeros(n, dtype=RECORD_DTYPE)
    rec["timestamp"] = np.sort(rng.integers(0, 2**50, n)).astype(np.uint64)
    rec["channel"] = rng.integers(0, 4, n)
    rec["flags"] = rng.integers(0, 2, n)
    rec["pulse_index"] = rng.integers(0, 2**32, n, dtype=np.uint64)
    return rec


def test_layout_sizes():
    assert HEADER_SIZE == 24
    assert RECORD_SIZE == 16


def test_header_bytes(tmp_path):
    p = tmp_path / "x.ptag"
    write_tagstream(p, sample_records(3), rep_period_ps=263158)
    raw = p.read_bytes()
    assert raw[:4] == b"PTAG"
    assert struct.unpack("<HHQQ", raw[4:24]) == (1, 0, 3, 263158)
    assert len(raw) == 24 + 3 * 16


def test_record_byte_layout(tmp_path):
    p = tmp_path / "x.ptag"
    write_tagstream(p, [TimeTag(0x0102030405060708, 2, 1, 0xAABBCCDD)])
    raw = p.read_bytes()[24:]
    assert raw == struct.pack("<QHHI", 0x0102030405060708, 2, 1, 0xAABBCCDD)


def test_roundtrip_byte_identity(tmp_path):
    a, b = tmp_path / "a.ptag", tmp_path / "b.ptag"
    write_tagstream(a, sample_records(5000), rep_period_ps=1000)
    s = read_tagstream(a, chunk_records=333)
    write_tagstream(b, s)
    assert a.read_bytes() == b.read_bytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2**64 - 1), st.integers(0, 3), st.integers(0, 2**16 - 1),
                          st.integers(0, 2**32 - 1)), max_size=50))
def test_tag_roundtrip_property(tmp_path_factory, rows):
    tags = [TimeTag(*r) for r in rows]
    p = tmp_path_factory.mktemp("rt") / "t.ptag"
    write_tagstream(p, TagStream.from_array(tags_to_array(tags), 5))
    assert list(read_tags(p)) == tags
    assert array_to_tags(tags_to_array(tags)) == tags


def test_empty_stream(tmp_path):
    p = tmp_path / "e.ptag"
    assert write_tagstream(p, np.empty(0, dtype=RECORD_DTYPE)) == 0
    assert len(read_tagstream(p)) == 0
    assert list(read_tagstream(p).chunks()) == []


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ptag"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(BadMagic):
        read_header(p)


def test_version_unsupported(tmp_path):
    p = tmp_path / "v.ptag"
    p.write_bytes(struct.pack("<4sHHQQ", MAGIC, 2, 0, 0, 0))
    with pytest.raises(VersionUnsupported):
        read_header(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "h.ptag"
    p.write_bytes(MAGIC + bytes(5))
    with pytest.raises(TruncatedRecord) as exc:
        read_header(p)
    assert exc.value.offset == 9


def test_truncated_record_offset(tmp_path):
    p = tmp_path / "t.ptag"
    write_tagstream(p, sample_records(10))
    raw = p.read_bytes()
    p.write_bytes(raw[:-7])  # last record cut short
    with pytest.raises(TruncatedRecord) as exc:
        read_tagstream(p)
    assert exc.value.offset == HEADER_SIZE + 9 * RECORD_SIZE


def test_missing_file_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        read_tagstream(tmp_path / "nope.ptag")


def test_unwritable_path(tmp_path):
    with pytest.raises(IoFailure):
        write_tagstream(tmp_path / "no" / "dir" / "x.ptag", sample_records(2))


def test_is_dark_flag():
    assert TimeTag(1, 0, 1).is_dark
    assert not TimeTag(1, 0, 0).is_dark


def test_stream_is_reiterable():
    s = TagStream.from_array(sample_records(100), chunk_size=7)
    assert np.array_equal(s.to_array(), s.to_array())
    assert len(s) == 100

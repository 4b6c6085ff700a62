import io
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvfiber.timetag_io import (
    HEADER_SIZE, TICK_MASK, TimeTagFormatError, TimeTagStream, TimeTagValidationError,
    encode_words, from_bytes, merge_streams, read_csv, read_ttag, to_bytes, write_csv, write_ttag,
)


def stream(ch, ticks, res=4):
    return TimeTagStream(res, np.array(ch, np.uint8), np.array(ticks, np.uint64))


def random_stream(n, seed=0, res=4):
    rng = np.random.default_rng(seed)
    ticks = np.sort(rng.integers(0, TICK_MASK, n, dtype=np.uint64, endpoint=True))
    return TimeTagStream(res, rng.integers(0, 16, n).astype(np.uint8), ticks)


class TestBinary:
    def test_empty_is_header_only(self, tmp_path):
        p = tmp_path / "e.ttg"
        write_ttag(TimeTagStream.empty(), p)
        data = p.read_bytes()
        assert len(data) == HEADER_SIZE == 22
        assert data[:4] == b"TTG1"
        assert struct.unpack("<H", data[4:6])[0] == 1
        assert len(read_ttag(p)) == 0

    def test_worked_word(self):
        w = encode_words(stream([2], [100]))
        assert int(w[0]) == 0x2000000000000064
        data = to_bytes(stream([2], [100]))
        assert data[HEADER_SIZE:] == (0x2000000000000064).to_bytes(8, "little")

    def test_header_fields(self):
        data = to_bytes(stream([1, 3], [5, 9], res=7))
        magic, ver, res, count = struct.unpack("<4sHQQ", data[:22])
        assert (magic, ver, res, count) == (b"TTG1", 1, 7, 2)

    def test_round_trip_bytes_identical(self, tmp_path):
        s = random_stream(1000, 3)
        a, b = tmp_path / "a.ttg", tmp_path / "b.ttg"
        write_ttag(s, a)
        s2 = read_ttag(a)
        write_ttag(s2, b)
        assert s2 == s
        assert a.read_bytes() == b.read_bytes()

    @settings(max_examples=30)
    @given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, TICK_MASK)), max_size=50))
    def test_round_trip_property(self, recs):
        recs = sorted(recs, key=lambda r: r[1])
        s = stream([c for c, _ in recs], [t for _, t in recs])
        assert from_bytes(to_bytes(s)) == s

    def test_bad_magic_and_version(self):
        good = to_bytes(stream([1], [1]))
        with pytest.raises(TimeTagFormatError):
            from_bytes(b"XXXX" + good[4:])
        with pytest.raises(TimeTagFormatError):
            from_bytes(good[:4] + struct.pack("<H", 2) + good[6:])
        with pytest.raises(TimeTagFormatError):
            from_bytes(good[:10])

    @pytest.mark.parametrize("delta", [-8, -1, 1, 8])
    def test_count_mismatch(self, delta):
        good = to_bytes(stream([1, 2], [1, 2]))
        bad = good + b"\0" * delta if delta > 0 else good[:delta]
        with pytest.raises(TimeTagFormatError):
            from_bytes(bad)

    def test_disorder_strict_and_lenient(self):
        head = struct.pack("<4sHQQ", b"TTG1", 1, 4, 2)
        words = np.array([(1 << 60) | 50, (2 << 60) | 10], dtype="<u8").tobytes()
        with pytest.raises(TimeTagValidationError):
            from_bytes(head + words)
        with pytest.warns(UserWarning):
            s = from_bytes(head + words, strict=False)
        assert list(s.ticks) == [10, 50] and list(s.channels) == [2, 1]

    def test_file_objects(self):
        buf = io.BytesIO()
        s = random_stream(10)
        write_ttag(s, buf)
        buf.seek(0)
        assert read_ttag(buf) == s


class TestCSV:
    def test_single_row(self):
        s = read_csv(io.StringIO("channel,time_ps\n1,5000\n"))
        assert len(s) == 1 and s.channels[0] == 1 and int(s.ticks[0]) * s.resolution_ps == 5000

    def test_out_of_order_strict(self):
        src = "channel,time_ps\n1,10\n1,30\n2,20\n"
        with pytest.raises(TimeTagValidationError, match="line 4"):
            read_csv(io.StringIO(src))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s = read_csv(io.StringIO(src), strict=False)
        assert list(s.ticks) == [10, 20, 30]

    @pytest.mark.parametrize("src,line", [("channel,time_ps\n1,abc\n", 2),
                                          ("channel,time_ps\n1,5\n1,6,7\n", 3),
                                          ("channel,time_ps\n16,5\n", 2)])
    def test_malformed_row(self, src, line):
        with pytest.raises(TimeTagFormatError, match=f"line {line}"):
            read_csv(io.StringIO(src))

    def test_bad_header(self):
        with pytest.raises(TimeTagFormatError, match="line 1"):
            read_csv(io.StringIO("ch,t\n1,2\n"))

    def test_csv_binary_csv(self, tmp_path):
        s = random_stream(200, 5, res=4)
        s = TimeTagStream(4, s.channels, s.ticks // np.uint64(8))  # keep time_ps in range
        c1 = tmp_path / "a.csv"
        write_csv(s, c1)
        b = tmp_path / "a.ttg"
        parsed = read_csv(c1, resolution_ps=4)
        write_ttag(parsed, b)
        c2 = tmp_path / "b.csv"
        write_csv(read_ttag(b), c2)
        assert c1.read_text() == c2.read_text()
        assert parsed == s


class TestMerge:
    def test_identity_and_size(self):
        a = random_stream(50, 1)
        assert merge_streams(a, TimeTagStream.empty()) == a
        assert merge_streams(TimeTagStream.empty(), a) == a
        b = random_stream(70, 2)
        m = merge_streams(a, b)
        assert len(m) == 120
        assert m.first_disorder() is None

    def test_tie_order(self):
        a = stream([1, 1], [5, 9])
        b = stream([2, 2], [5, 7])
        assert list(merge_streams(a, b).channels) == [1, 2, 2, 1]
        assert list(merge_streams(b, a).channels) == [2, 1, 2, 1]
        ab, ba = merge_streams(a, b), merge_streams(b, a)
        assert np.array_equal(ab.ticks, ba.ticks)

    def test_resolution_mismatch(self):
        with pytest.raises(ValueError):
            merge_streams(stream([1], [1], 4), stream([1], [1], 1))


def test_validation_limits():
    with pytest.raises(TimeTagValidationError):
        stream([16], [0]).validate()
    with pytest.raises(TimeTagValidationError):
        TimeTagStream(0, np.zeros(1, np.uint8), np.zeros(1, np.uint64))

"""Reader checks against hand-written files."""

import struct

import numpy as np
import pytest

from causalfigs import readers
from causalfigs.readers import FormatError

from conftest import (pack_grid, write_grid, write_history,
                      write_per_time, write_snapshots, write_spectrum)


class TestGridReader:
    def test_round_trip(self, tmp_path):
        t = np.array([0.0, 0.5, 1.0])
        x = np.linspace(0, 1, 5)
        values = np.arange(3 * 5 * 2, dtype=float).reshape(3, 5, 2)
        path = write_grid(tmp_path / "g.grid", t, (x,), values,
                          ("u", "v"), {"note": "hi"})
        grid = readers.read_grid(path)
        assert np.array_equal(grid.t, t)
        assert np.array_equal(grid.axes[0], x)
        assert np.array_equal(grid.values, values)
        assert grid.components == ("u", "v")
        assert grid.meta == {"note": "hi"}
        assert np.array_equal(grid.component("v"), values[..., 1])

    def test_zero_axes(self, tmp_path):
        t = np.array([0.0, 1.0])
        values = np.ones((2, 3))
        path = write_grid(tmp_path / "o.grid", t, (), values,
                          ("x", "y", "z"))
        grid = readers.read_grid(path)
        assert grid.axes == ()
        assert grid.values.shape == (2, 3)

    def test_unknown_component(self, tmp_path):
        path = write_grid(tmp_path / "g.grid", np.array([0.0]), (),
                          np.ones((1, 1)), ("u",))
        with pytest.raises(KeyError, match="no component"):
            readers.read_grid(path).component("w")

    def test_wrong_magic(self, tmp_path):
        raw = bytearray(pack_grid(np.array([0.0]), (), np.ones((1, 1)),
                                  ("u",)))
        raw[:8] = b"NOTGRID\x00"
        path = tmp_path / "bad.grid"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            readers.read_grid(path)

    def test_bad_version(self, tmp_path):
        raw = bytearray(pack_grid(np.array([0.0]), (), np.ones((1, 1)),
                                  ("u",)))
        struct.pack_into("<I", raw, 8, 2)
        body = bytes(raw[:-4])
        import zlib
        path = tmp_path / "bad.grid"
        path.write_bytes(body + struct.pack(
            "<I", zlib.crc32(body) & 0xFFFFFFFF))
        with pytest.raises(FormatError, match="version"):
            readers.read_grid(path)

    def test_byte_order(self, tmp_path):
        raw = bytearray(pack_grid(np.array([0.0]), (), np.ones((1, 1)),
                                  ("u",)))
        struct.pack_into(">I", raw, 12, 0x01020304)
        path = tmp_path / "bad.grid"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="byte order"):
            readers.read_grid(path)

    def test_corruption(self, tmp_path):
        raw = bytearray(pack_grid(np.array([0.0, 1.0]), (),
                                  np.ones((2, 1)), ("u",)))
        raw[len(raw) // 2] ^= 0xFF
        path = tmp_path / "bad.grid"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="checksum"):
            readers.read_grid(path)

    def test_truncation(self, tmp_path):
        raw = pack_grid(np.array([0.0]), (), np.ones((1, 1)), ("u",))
        path = tmp_path / "bad.grid"
        path.write_bytes(raw[:12])
        with pytest.raises(FormatError, match="truncated"):
            readers.read_grid(path)


class TestCsvReaders:
    def test_history_columns(self, tmp_path):
        rows = [(0, 1, 0.01, 1.5, 2.5, 0.9, 1e-3, 12.0),
                (0, 2, 0.01, 1.0, 2.0, 0.95, 1e-3, 11.0),
                (1, 1, 0.1, 0.5, 1.0, 0.99, 1e-3, 10.0)]
        path = write_history(tmp_path / "h.csv", rows)
        cols = readers.read_history(path)
        assert cols["window"].tolist() == [0, 0, 1]
        assert cols["iteration"].dtype == np.int64
        assert cols["loss_ic"].tolist() == [1.5, 1.0, 0.5]
        assert cols["wall_ms"].tolist() == [12.0, 11.0, 10.0]

    def test_snapshot_grouping(self, tmp_path):
        w0 = np.array([1.0, 0.8, 0.4])
        r0 = np.array([0.1, 0.2, 0.9])
        path = write_snapshots(tmp_path / "s.csv",
                               [(0, 5, 0.01, w0, r0),
                                (0, 10, 0.1, w0 / 2, r0 * 2)])
        groups = readers.read_snapshots(path)
        assert set(groups) == {(0, 5, 0.01), (0, 10, 0.1)}
        slices, weights, residuals = groups[(0, 5, 0.01)]
        assert slices.tolist() == [0, 1, 2]
        assert np.array_equal(weights, w0)
        assert np.array_equal(residuals, r0)

    def test_spectrum_with_time(self, tmp_path):
        path = write_spectrum(tmp_path / "sp.csv", [0, 1, 2],
                              [0.5, 0.3, 0.2], t=0.75)
        k, e, t = readers.read_spectrum(path)
        assert k.tolist() == [0, 1, 2]
        assert e.tolist() == [0.5, 0.3, 0.2]
        assert t == 0.75

    def test_spectrum_without_time(self, tmp_path):
        path = write_spectrum(tmp_path / "sp.csv", [1], [1.0])
        _, _, t = readers.read_spectrum(path)
        assert t is None

    def test_per_time(self, tmp_path):
        path = write_per_time(tmp_path / "pt.csv", [0.0, 0.5],
                              {"u": [0.1, 0.2], "v": [0.3, 0.4]})
        t, cols = readers.read_per_time_errors(path)
        assert t.tolist() == [0.0, 0.5]
        assert cols["v"].tolist() == [0.3, 0.4]

    def test_schema_line_required(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("window,iteration\n0,1\n", encoding="utf-8")
        with pytest.raises(FormatError, match="schema"):
            readers.read_history(path)

    def test_wrong_schema_family(self, tmp_path):
        path = write_spectrum(tmp_path / "sp.csv", [1], [1.0])
        with pytest.raises(FormatError, match="schema"):
            readers.read_history(path)

    def test_snapshot_header_checked(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("# causalpinn-snapshots v1\na,b\n1,2\n",
                        encoding="utf-8")
        with pytest.raises(FormatError, match="header"):
            readers.read_snapshots(path)

"""On-disk format tests: binary checkpoints and grids must round-trip
bit-exactly and refuse anything malformed; CSV schemas must round-trip
doubles losslessly."""

import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalpinn.diagnostics import GridSolution
from causalpinn.models import ArchitectureSpec, init_params
from causalpinn.storage import (CHECKPOINT_MAGIC, FORMAT_VERSION,
                                StorageError, load_checkpoint, load_grid,
                                load_grid_meta, read_errors_csv,
                                read_history_csv, read_ntk_csv,
                                read_per_time_errors_csv, read_snapshots_csv,
                                read_spectrum_csv, save_checkpoint,
                                save_grid, write_errors_csv,
                                write_history_csv, write_ntk_csv,
                                write_per_time_errors_csv,
                                write_snapshots_csv, write_spectrum_csv)
from causalpinn.tape import ParameterSet
from causalpinn.training import HistoryRow


def small_arch() -> ArchitectureSpec:
    return ArchitectureSpec(kind="modified_mlp", depth=3, width=8, in_dim=6,
                            out_dim=2, embedding=("fourier_1d", 2, 2.0))


def checkpoint_fixture(tmp_path, meta=None):
    arch = small_arch()
    params = init_params(arch, 0)
    ic = {"u": np.linspace(-1.0, 1.0, 7)}
    path = tmp_path / "w.ckpt"
    save_checkpoint(path, arch, 3, (0.75, 1.0), params, ic_data=ic,
                    meta=meta or {"iteration": 42, "epsilon": 1.0,
                                  "min_weight": 0.5})
    return path, arch, params, ic


class TestCheckpointRoundTrip:
    def test_parameters_bit_exact(self, tmp_path):
        path, arch, params, ic = checkpoint_fixture(tmp_path)
        cp = load_checkpoint(path)
        loaded = cp.params()
        assert sorted(loaded) == sorted(params)
        for name in params:
            assert params[name].tobytes() == loaded[name].tobytes()

    def test_metadata_and_bounds(self, tmp_path):
        path, arch, _, ic = checkpoint_fixture(tmp_path)
        cp = load_checkpoint(path)
        assert cp.arch == arch
        assert cp.window_index == 3
        assert cp.window == (0.75, 1.0)
        assert cp.meta == {"iteration": 42, "epsilon": 1.0,
                           "min_weight": 0.5}
        assert np.array_equal(cp.ic_data()["u"], ic["u"])

    def test_awkward_values_survive(self, tmp_path):
        params = ParameterSet({"layer0.W": np.array([[-0.0, 1e-250],
                                                     [np.pi, -1e300]])})
        path = tmp_path / "w.ckpt"
        save_checkpoint(path, small_arch(), 0, (0.0, 1.0), params)
        back = load_checkpoint(path).params()["layer0.W"]
        assert back.tobytes() == params["layer0.W"].tobytes()

    def test_save_is_deterministic(self, tmp_path):
        p1, *_ = checkpoint_fixture(tmp_path)
        data1 = p1.read_bytes()
        p1.unlink()
        p2, *_ = checkpoint_fixture(tmp_path)
        assert p2.read_bytes() == data1


class TestCheckpointRejection:
    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTMINE!" + b"\x00" * 64)
        with pytest.raises(StorageError, match="magic"):
            load_checkpoint(path)

    def test_grid_file_is_not_a_checkpoint(self, tmp_path):
        gp = tmp_path / "g.grid"
        save_grid(gp, GridSolution(np.array([0.0, 1.0]), (),
                                   np.zeros((2, 1)), ("x",)))
        with pytest.raises(StorageError, match="magic"):
            load_checkpoint(gp)

    def test_version_mismatch(self, tmp_path):
        path, *_ = checkpoint_fixture(tmp_path)
        raw = bytearray(path.read_bytes())
        off = len(CHECKPOINT_MAGIC)
        struct.pack_into("<I", raw, off, FORMAT_VERSION + 1)
        path.write_bytes(bytes(raw))
        with pytest.raises(StorageError, match="version"):
            load_checkpoint(path)

    def test_endianness_mismatch(self, tmp_path):
        path, *_ = checkpoint_fixture(tmp_path)
        raw = bytearray(path.read_bytes())
        off = len(CHECKPOINT_MAGIC)
        # the marker as a big-endian writer would have produced it
        struct.pack_into(">I", raw, off + 4, 0x01020304)
        path.write_bytes(bytes(raw))
        with pytest.raises(StorageError, match="byte order"):
            load_checkpoint(path)

    def test_truncation_fails_checksum(self, tmp_path):
        path, *_ = checkpoint_fixture(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(StorageError, match="checksum"):
            load_checkpoint(path)

    def test_hard_truncation(self, tmp_path):
        path, *_ = checkpoint_fixture(tmp_path)
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(StorageError, match="truncated"):
            load_checkpoint(path)

    def test_flipped_payload_byte(self, tmp_path):
        path, *_ = checkpoint_fixture(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(StorageError, match="checksum"):
            load_checkpoint(path)


class TestGridRoundTrip:
    def test_1d_grid(self, tmp_path):
        t = np.linspace(0.0, 1.0, 5)
        x = np.linspace(-1.0, 1.0, 8, endpoint=False)
        vals = np.sin(np.pi * x)[None, :, None] * np.exp(-t)[:, None, None]
        sol = GridSolution(t, (x,), vals, ("u",))
        path = tmp_path / "s.grid"
        save_grid(path, sol, meta={"problem": "allen_cahn", "dt": 1e-3})
        back = load_grid(path)
        assert back.t.tobytes() == t.tobytes()
        assert back.axes[0].tobytes() == x.tobytes()
        assert back.values.tobytes() == vals.tobytes()
        assert back.components == ("u",)
        assert load_grid_meta(path) == {"problem": "allen_cahn", "dt": 1e-3}

    def test_2d_grid(self, tmp_path):
        rng = np.random.default_rng(0)
        sol = GridSolution(np.array([0.0, 0.5]),
                           (np.arange(4.0), np.arange(4.0)),
                           rng.standard_normal((2, 4, 4, 3)),
                           ("u", "v", "w"))
        path = tmp_path / "s.grid"
        save_grid(path, sol)
        back = load_grid(path)
        assert back.values.tobytes() == sol.values.tobytes()
        assert len(back.axes) == 2

    def test_ode_grid_without_axes(self, tmp_path):
        sol = GridSolution(np.arange(3.0), (),
                           np.arange(9.0).reshape(3, 3), ("x", "y", "z"))
        path = tmp_path / "s.grid"
        save_grid(path, sol)
        back = load_grid(path)
        assert back.axes == ()
        assert back.values.tobytes() == sol.values.tobytes()

    def test_checkpoint_is_not_a_grid(self, tmp_path):
        path, *_ = checkpoint_fixture(tmp_path)
        with pytest.raises(StorageError, match="magic"):
            load_grid(path)


class TestCsvRoundTrips:
    def test_history(self, tmp_path):
        rows = [(0, HistoryRow(1, 1e-2, 0.5, 2.25, 1e-200, 1e-3, 12.5)),
                (0, HistoryRow(2, 1e-2, 0.1, 0.3 + 1e-16, 0.99, 1e-3, 8.0)),
                (1, HistoryRow(1, 100.0, 0.0, np.pi, 1.0, 9e-4, 7.0))]
        path = tmp_path / "h.csv"
        write_history_csv(path, rows)
        back = read_history_csv(path)
        assert len(back) == 3
        for (w, row), rec in zip(rows, back):
            assert rec["window"] == w
            for f in HistoryRow.FIELDS:
                assert rec[f] == getattr(row, f), f

    def test_snapshots(self, tmp_path):
        snaps = [(0, 10, 0.01, np.array([1.0, 0.5, 1e-250]),
                  np.array([0.1, 0.2, 0.3])),
                 (1, 20, 0.1, np.array([1.0, 1.0]), np.array([0.0, 0.0]))]
        path = tmp_path / "s.csv"
        write_snapshots_csv(path, snaps)
        back = read_snapshots_csv(path)
        assert len(back) == 5
        assert back[0] == {"window": 0, "iteration": 10, "epsilon": 0.01,
                           "slice": 0, "weight": 1.0, "residual": 0.1}
        assert back[2]["weight"] == 1e-250

    def test_errors(self, tmp_path):
        pairs = [("u", 1.43e-3), ("v", 0.0), ("w", np.pi)]
        path = tmp_path / "e.csv"
        write_errors_csv(path, pairs)
        assert read_errors_csv(path) == pairs

    def test_per_time_errors(self, tmp_path):
        t = np.array([0.0, 0.5, 1.0])
        cols = {"u": np.array([0.1, 0.2, 0.3]),
                "v": np.array([1e-300, 0.5, 2.0])}
        path = tmp_path / "p.csv"
        write_per_time_errors_csv(path, t, cols)
        t2, cols2 = read_per_time_errors_csv(path)
        assert np.array_equal(t, t2)
        assert sorted(cols2) == ["u", "v"]
        for k in cols:
            assert np.array_equal(cols[k], cols2[k])

    def test_spectrum_with_and_without_time(self, tmp_path):
        k = np.arange(5)
        E = np.array([0.0, 0.5, 0.25, 0.125, 0.125])
        p1 = tmp_path / "s1.csv"
        write_spectrum_csv(p1, k, E, t=0.75)
        k2, E2 = read_spectrum_csv(p1)
        assert np.array_equal(k, k2) and np.array_equal(E, E2)
        assert "# t = 0.75" in p1.read_text()
        p2 = tmp_path / "s2.csv"
        write_spectrum_csv(p2, k, E)
        k3, E3 = read_spectrum_csv(p2)
        assert np.array_equal(E, E3) and np.array_equal(k, k3)

    def test_ntk(self, tmp_path):
        t = np.array([0.1, 0.9])
        r = np.array([123.456, 1e-10])
        path = tmp_path / "n.csv"
        write_ntk_csv(path, t, r)
        t2, r2 = read_ntk_csv(path)
        assert np.array_equal(t, t2) and np.array_equal(r, r2)

    def test_schema_line_is_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# some-other-schema v9\ncomponent,relative_l2\n"
                        "u,0.5\n")
        with pytest.raises(StorageError, match="schema"):
            read_errors_csv(path)

    def test_wrong_schema_family_rejected(self, tmp_path):
        path = tmp_path / "h.csv"
        write_errors_csv(path, [("u", 0.5)])
        with pytest.raises(StorageError, match="schema"):
            read_history_csv(path)

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_seventeen_digits_round_trip_any_double(self, value):
        # property behind every CSV writer: no precision loss
        path_text = f"{value:.17g}"
        assert float(path_text) == value

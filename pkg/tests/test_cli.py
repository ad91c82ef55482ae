"""End-to-end command-line tests on desk-sized runs: train artifacts,
deterministic replay, checkpoint stitching, reference generation, and the
evaluation pipeline."""

import numpy as np
import pytest

from causalpinn.cli import main
from causalpinn.config import load_config
from causalpinn.diagnostics import GridSolution
from causalpinn.problems import get_problem
from causalpinn.storage import (load_checkpoint, load_grid, load_grid_meta,
                                read_errors_csv, read_history_csv,
                                read_ntk_csv, read_per_time_errors_csv,
                                read_snapshots_csv, read_spectrum_csv,
                                save_grid)
from causalpinn.training import TimeMarchPredictor

LORENZ_DESK = """\
[experiment]
problem = lorenz
seed = 0
out_dir = {out}

[architecture]
depth = 2
width = 16

[training]
n_t = 16
windows = 2
t_final = 0.5
max_iters_per_eps = 20
snapshot_every = 10

[reference]
frames = 50
"""


def write_lorenz_config(dir_, out):
    path = dir_ / "lorenz.ini"
    path.write_text(LORENZ_DESK.format(out=out))
    return path


@pytest.fixture(scope="module")
def lorenz_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("lorenz_cli")
    out = base / "run"
    cfg = write_lorenz_config(base, out)
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["reference", "--config", str(cfg)]) == 0
    return cfg, out


class TestTrainArtifacts:
    def test_expected_files(self, lorenz_run):
        _, out = lorenz_run
        for name in ("resolved_config.ini", "history.csv", "snapshots.csv",
                     "window_000.ckpt", "window_001.ckpt",
                     "reference.grid"):
            assert (out / name).exists(), name

    def test_history_covers_both_windows(self, lorenz_run):
        _, out = lorenz_run
        rows = read_history_csv(out / "history.csv")
        windows = {r["window"] for r in rows}
        assert windows == {0, 1}
        # 5 rungs x 20 iterations, no early stop at this tiny budget
        per_window = sum(1 for r in rows if r["window"] == 0)
        assert per_window == 100
        iters = [r["iteration"] for r in rows if r["window"] == 0]
        assert iters == sorted(iters)

    def test_snapshots_have_all_slices(self, lorenz_run):
        _, out = lorenz_run
        snaps = read_snapshots_csv(out / "snapshots.csv")
        by_key = {}
        for rec in snaps:
            by_key.setdefault((rec["window"], rec["iteration"],
                               rec["epsilon"]), []).append(rec["slice"])
        for slices in by_key.values():
            assert slices == list(range(16))

    def test_checkpoint_meta_is_deterministic_summary(self, lorenz_run):
        _, out = lorenz_run
        cp = load_checkpoint(out / "window_000.ckpt")
        assert cp.meta["problem"] == "lorenz"
        assert cp.meta["iteration"] == 100
        assert cp.meta["precision"] == "f64"
        assert "wall" not in " ".join(cp.meta)

    def test_resolved_config_reloads(self, lorenz_run):
        _, out = lorenz_run
        cfg = load_config(out / "resolved_config.ini")
        assert cfg.problem == "lorenz"
        assert cfg.train.windows == 2
        assert cfg.train.max_iters_per_eps == 20


class TestDeterministicReplay:
    def test_rerun_reproduces_everything_but_wall_time(self, lorenz_run,
                                                       tmp_path):
        cfg_path, out = lorenz_run
        out2 = tmp_path / "replay"
        assert main(["train", "--config", str(cfg_path),
                     "--out-dir", str(out2)]) == 0
        for name in ("window_000.ckpt", "window_001.ckpt",
                     "snapshots.csv"):
            assert (out / name).read_bytes() == (out2 / name).read_bytes(), \
                name
        a = (out / "history.csv").read_text().splitlines()
        b = (out2 / "history.csv").read_text().splitlines()
        assert len(a) == len(b)
        # wall_ms is real timing and sits in the final column; everything
        # before it replays exactly
        for la, lb in zip(a, b):
            assert la.rsplit(",", 1)[0] == lb.rsplit(",", 1)[0]

    def test_different_seed_changes_the_run(self, lorenz_run, tmp_path):
        cfg_path, out = lorenz_run
        out2 = tmp_path / "other_seed"
        assert main(["train", "--config", str(cfg_path), "--seed", "1",
                     "--out-dir", str(out2)]) == 0
        assert (out / "window_000.ckpt").read_bytes() != \
            (out2 / "window_000.ckpt").read_bytes()


class TestCheckpointStitching:
    def test_join_continuity(self, lorenz_run):
        _, out = lorenz_run
        cps = [load_checkpoint(out / f"window_{k:03d}.ckpt")
               for k in range(2)]
        problem = get_problem("lorenz")
        predictor = TimeMarchPredictor(
            problem, cps[0].arch,
            [(c.window, c.params(), c.ic_data()) for c in cps])
        # the exact-IC wrapper pins the right window to its stored state
        at_join = predictor.evaluate(np.array([0.25]))[0]
        assert np.max(np.abs(at_join - cps[1].ic_data()["state"])) <= 1e-12
        left = predictor.evaluate(np.array([0.25 - 1e-9]))[0]
        assert np.max(np.abs(left - at_join)) <= 1e-6

    def test_window_dispatch(self, lorenz_run):
        _, out = lorenz_run
        cps = [load_checkpoint(out / f"window_{k:03d}.ckpt")
               for k in range(2)]
        predictor = TimeMarchPredictor(
            get_problem("lorenz"), cps[0].arch,
            [(c.window, c.params(), c.ic_data()) for c in cps])
        assert predictor.window_index(0.1) == 0
        assert predictor.window_index(0.3) == 1
        assert predictor.window_index(0.5) == 1


class TestEval:
    def test_run_eval_writes_error_tables(self, lorenz_run, tmp_path):
        _, out = lorenz_run
        ev = tmp_path / "eval"
        assert main(["eval", "--run-dir", str(out),
                     "--reference", str(out / "reference.grid"),
                     "--out-dir", str(ev)]) == 0
        pairs = read_errors_csv(ev / "errors.csv")
        assert [name for name, _ in pairs] == ["x", "y", "z"]
        assert all(np.isfinite(v) and v >= 0.0 for _, v in pairs)
        t, cols = read_per_time_errors_csv(ev / "errors_per_time.csv")
        assert t.shape[0] == 51
        assert sorted(cols) == ["x", "y", "z"]

    def test_self_eval_is_exactly_zero(self, lorenz_run, tmp_path):
        _, out = lorenz_run
        ev = tmp_path / "self"
        ref = out / "reference.grid"
        assert main(["eval", "--pred", str(ref), "--reference", str(ref),
                     "--out-dir", str(ev)]) == 0
        assert all(v == 0.0 for _, v in read_errors_csv(ev / "errors.csv"))

    def test_missing_component_is_an_error(self, lorenz_run, tmp_path,
                                           capsys):
        _, out = lorenz_run
        partial = tmp_path / "partial.grid"
        full = load_grid(out / "reference.grid")
        save_grid(partial, GridSolution(full.t, (), full.values[:, :1],
                                        ("x",)))
        rc = main(["eval", "--pred", str(out / "reference.grid"),
                   "--reference", str(partial),
                   "--out-dir", str(tmp_path / "ev")])
        assert rc == 1
        assert "missing component" in capsys.readouterr().err

    def test_eval_needs_a_prediction_source(self, lorenz_run, tmp_path,
                                            capsys):
        _, out = lorenz_run
        rc = main(["eval", "--reference", str(out / "reference.grid"),
                   "--out-dir", str(tmp_path / "ev")])
        assert rc == 1
        assert "run-dir or --pred" in capsys.readouterr().err


class TestStopCriterionFlag:
    def test_flag_lands_in_resolved_config_and_disables_stops(self,
                                                              tmp_path):
        out = tmp_path / "run"
        cfg = write_lorenz_config(tmp_path, out)
        assert main(["train", "--config", str(cfg),
                     "--no-stop-criterion"]) == 0
        text = (out / "resolved_config.ini").read_text()
        assert "stop_criterion = false" in text
        rows = read_history_csv(out / "history.csv")
        # every rung must burn its full budget
        assert sum(1 for r in rows if r["window"] == 0) == 100
        assert sum(1 for r in rows if r["window"] == 1) == 100


class TestReference:
    def test_self_test_passes(self, capsys):
        assert main(["reference", "--self-test"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_reference_metadata(self, lorenz_run):
        _, out = lorenz_run
        meta = load_grid_meta(out / "reference.grid")
        assert meta["problem"] == "lorenz"
        assert meta["dt"] == 1e-3
        assert meta["frames"] == 50

    def test_reference_without_config(self, capsys):
        assert main(["reference"]) == 1
        assert "--config" in capsys.readouterr().err

    def test_ks_chaotic_writes_ic_and_trajectory(self, tmp_path):
        out = tmp_path / "ks"
        cfg = tmp_path / "ks.ini"
        cfg.write_text("\n".join([
            "[experiment]", "problem = ks_chaotic", f"out_dir = {out}",
            "[training]", "windows = 1", "t_final = 0.1",
            "[reference]", "modes = 64", "dt = 5e-4", "frames = 10", ""]))
        assert main(["reference", "--config", str(cfg)]) == 0
        ic = load_grid(out / "reference_ic.grid")
        traj = load_grid(out / "reference.grid")
        assert ic.t.shape == (1,) and ic.t[0] == 0.0
        assert ic.axes[0].shape == (64,)
        assert traj.t.shape == (11,)
        # the trajectory starts from the written warm state
        assert np.array_equal(traj.values[0], ic.values[0])


class TestAncillaryCommands:
    def test_ntk_profile(self, lorenz_run, tmp_path):
        _, out = lorenz_run
        dst = tmp_path / "ntk"
        assert main(["ntk", "--run-dir", str(out),
                     "--times", "0.1,0.4", "--points", "4",
                     "--out-dir", str(dst)]) == 0
        t, rates = read_ntk_csv(dst / "ntk.csv")
        assert np.array_equal(t, [0.1, 0.4])
        assert np.all(np.isfinite(rates)) and np.all(rates > 0.0)

    def test_spectrum_needs_2d(self, lorenz_run, tmp_path, capsys):
        _, out = lorenz_run
        rc = main(["spectrum", "--grid", str(out / "reference.grid"),
                   "--times", "0.1", "--out-dir", str(tmp_path)])
        assert rc == 1
        assert "two-dimensional" in capsys.readouterr().err

    def test_spectrum_of_saved_flow_grid(self, tmp_path):
        n = 32
        g = 2.0 * np.pi * np.arange(n) / n
        X, Y = np.meshgrid(g, g, indexing="ij")
        vals = np.stack([np.sin(Y), np.sin(2.0 * X), 0.0 * X], axis=-1)
        sol = GridSolution(np.array([0.0]), (g, g), vals[None],
                           ("u", "v", "w"))
        path = tmp_path / "flow.grid"
        save_grid(path, sol)
        assert main(["spectrum", "--grid", str(path), "--times", "0",
                     "--out-dir", str(tmp_path / "spec")]) == 0
        k, E = read_spectrum_csv(tmp_path / "spec" / "spectrum_grid_00.csv")
        assert E.sum() == pytest.approx(1.0, abs=1e-12)
        assert E[1] == pytest.approx(0.5) and E[2] == pytest.approx(0.5)


class TestBadInput:
    def test_unknown_config_key_fails(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[experiment]\nproblem = lorenz\n"
                       "[training]\nlearningrate = 1\n")
        assert main(["train", "--config", str(cfg)]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "no.ini")]) == 1
        assert "cannot read" in capsys.readouterr().err

    def test_bad_time_list(self, lorenz_run, tmp_path, capsys):
        _, out = lorenz_run
        rc = main(["ntk", "--run-dir", str(out), "--times", "a,b",
                   "--out-dir", str(tmp_path)])
        assert rc == 1
        assert "time list" in capsys.readouterr().err

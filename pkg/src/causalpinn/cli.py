"""Command-line front end.

Subcommands: train (run the windowed curriculum and persist everything),
reference (write validation trajectories with the spectral solvers),
eval (compare a trained run or a saved grid against a reference),
ntk (gradient-alignment profile of a trained run),
spectrum (energy spectra of a saved 2D grid).

All file outputs are deterministic for a fixed (config, seed, workers=1)
triple except the wall_ms column of history.csv, which records real timing.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from .config import (ConfigError, ExperimentConfig, load_config,
                     resolved_config_text)
from .diagnostics import (GridSolution, energy_spectrum, ntk_convergence_rate,
                          per_time_relative_l2, relative_l2)
from .problems import ProblemDefinition, get_problem
from .spectral import (ReferenceRejected, SpectralConfig, ac_spectral_problem,
                       etdrk4_solve, grid_1d, grid_2d, ks_case1_problem,
                       ks_case2_problem, ks_chaotic_ic, lorenz_reference,
                       ns2d_reference, random_initial_vorticity,
                       resample_periodic_1d, resample_periodic_2d,
                       velocity_from_vorticity)
from .storage import (StorageError, load_checkpoint, load_grid,
                      save_checkpoint, save_grid, write_errors_csv,
                      write_history_csv, write_ntk_csv,
                      write_per_time_errors_csv, write_snapshots_csv,
                      write_spectrum_csv)
from .training import (TimeMarchPredictor, TrainingDiverged, time_march,
                       uniform_spatial_grid)


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# shared plumbing

def _apply_overrides(cfg: ExperimentConfig,
                     args: argparse.Namespace) -> ExperimentConfig:
    """Fold command-line flags into the loaded config."""
    train = cfg.train
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        updates["workers"] = args.workers
    if getattr(args, "no_stop_criterion", False):
        updates["stop_criterion"] = False
    if getattr(args, "precision", None) is not None:
        updates["precision"] = args.precision
    if updates:
        train = dataclasses.replace(train, **updates)
    out_dir = cfg.out_dir
    if getattr(args, "out_dir", None) is not None:
        out_dir = args.out_dir
    return ExperimentConfig(train=train, out_dir=out_dir,
                            reference=cfg.reference)


def _load_experiment(args: argparse.Namespace) -> ExperimentConfig:
    return _apply_overrides(load_config(args.config), args)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_times(raw: str) -> np.ndarray:
    try:
        times = np.array([float(v) for v in raw.split(",") if v.strip()])
    except ValueError:
        raise CliError(f"cannot parse time list {raw!r}") from None
    if times.size == 0:
        raise CliError("empty time list")
    return times


def _reference_steps(cfg: ExperimentConfig, t_final: float) -> tuple[int, int]:
    """(n_steps, save_every) for the configured frame count."""
    dt = float(cfg.reference["dt"])
    frames = int(cfg.reference["frames"])
    n_steps = round(t_final / dt)
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise CliError(f"reference dt {dt} does not divide t_final {t_final}")
    if frames < 1 or n_steps % frames:
        raise CliError(f"frames {frames} does not divide {n_steps} steps")
    return n_steps, n_steps // frames


# ---------------------------------------------------------------------------
# external initial conditions

def external_initial_data(cfg: ExperimentConfig,
                          problem: ProblemDefinition) -> dict | None:
    """Training IC for problems whose starting state comes from a solver
    run rather than a closed form, resampled onto the collocation mesh."""
    if problem.name == "ks_chaotic":
        modes = int(cfg.reference["modes"])
        dt = float(cfg.reference["dt"])
        warm = ks_chaotic_ic(SpectralConfig(modes, dt, 0.5,
                                            save_every=round(0.5 / dt)))
        return {"u": resample_periodic_1d(warm, cfg.train.n_x)}
    if problem.name == "ns2d":
        modes = int(cfg.reference["modes"])
        side = math.isqrt(cfg.train.ic_points)
        w0 = random_initial_vorticity(cfg.train.seed, 5.0, modes)
        w = resample_periodic_2d(w0, side)
        k = 2.0 * np.pi * np.fft.fftfreq(side, d=1.0 / side) / (2.0 * np.pi)
        kx, ky = np.meshgrid(k, k, indexing="ij")
        uh, vh = velocity_from_vorticity(np.fft.fft2(w), kx, ky)
        return {"u": np.fft.ifft2(uh).real.ravel(),
                "v": np.fft.ifft2(vh).real.ravel(),
                "w": w.ravel()}
    return None


# ---------------------------------------------------------------------------
# train

def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_experiment(args)
    out = _out_dir(cfg)
    (out / "resolved_config.ini").write_text(resolved_config_text(cfg))
    problem = get_problem(cfg.problem)
    initial = external_initial_data(cfg, problem)

    def progress(window, iteration, epsilon, loss, min_w):
        if iteration % 500 == 0:
            print(f"  window {window} iter {iteration} eps {epsilon:g} "
                  f"loss {loss:.6e} min_w {min_w:.4f}", file=sys.stderr)

    try:
        results = time_march(problem, cfg.train, initial_data=initial,
                             progress=progress)
    except TrainingDiverged as e:
        print(f"training failed: {e}", file=sys.stderr)
        return 1

    write_history_csv(out / "history.csv",
                      [(k, row) for k, res in enumerate(results)
                       for row in res.history])
    write_snapshots_csv(out / "snapshots.csv",
                        [(k,) + snap for k, res in enumerate(results)
                         for snap in res.snapshots])
    for k, res in enumerate(results):
        last = res.history[-1]
        meta = {"problem": cfg.problem, "seed": cfg.train.seed,
                "precision": cfg.train.precision,
                "iteration": last.iteration, "epsilon": last.epsilon,
                "min_weight": last.min_weight,
                "loss_ic": last.loss_ic, "loss_res": last.loss_res}
        save_checkpoint(out / f"window_{k:03d}.ckpt", cfg.train.arch, k,
                        res.window, res.params, ic_data=res.ic_data,
                        meta=meta)
        stopped = sum(r.stopped_by_criterion for r in res.rungs)
        print(f"window {k} [{res.window[0]:g}, {res.window[1]:g}]: "
              f"{last.iteration} iterations, {stopped}/{len(res.rungs)} "
              f"rungs stopped early, min_weight {last.min_weight:.6f}, "
              f"loss_ic {last.loss_ic:.6e}, loss_res {last.loss_res:.6e}")
    final = results[-1].history[-1]
    print(f"final min_weight {final.min_weight:.6f} "
          f"loss {final.loss_ic + final.loss_res:.6e}")
    return 0


# ---------------------------------------------------------------------------
# reference

def _taylor_green_self_test() -> float:
    """Largest relative L2 deviation of the solver from the decaying
    cellular flow over one time unit."""
    n, re = 64, 100.0
    X, Y = grid_2d(n)
    w0 = -2.0 * np.cos(X) * np.cos(Y)
    sol = ns2d_reference(w0, re, SpectralConfig(n, 1e-2, 1.0, save_every=25))
    worst = 0.0
    for i, t in enumerate(sol.t):
        decay = np.exp(-2.0 * t / re)
        exact = np.stack([np.cos(X) * np.sin(Y) * decay,
                          -np.sin(X) * np.cos(Y) * decay,
                          w0 * decay], axis=-1)
        err = np.linalg.norm(sol.values[i] - exact)
        worst = max(worst, err / np.linalg.norm(exact))
    return worst


def cmd_reference(args: argparse.Namespace) -> int:
    if args.self_test:
        worst = _taylor_green_self_test()
        ok = worst <= 1e-6
        print(f"taylor_green self-test: max relative error {worst:.3e} "
              f"({'PASS' if ok else 'FAIL'}, tolerance 1e-06)")
        return 0 if ok else 1
    if args.config is None:
        raise CliError("reference needs --config (or --self-test)")
    cfg = _load_experiment(args)
    out = _out_dir(cfg)
    name = cfg.problem
    t_final = cfg.train.t_final
    modes = int(cfg.reference.get("modes", 0))
    dt = float(cfg.reference["dt"])
    meta = {"problem": name, "dt": dt, "t_final": t_final, "frames":
            int(cfg.reference["frames"])}

    if name == "lorenz":
        n_steps, save_every = _reference_steps(cfg, t_final)
        sol = lorenz_reference(np.array([1.0, 1.0, 1.0]), t_final, dt,
                               save_every=save_every)
        meta["method"] = "rk4_halving_gate"
    elif name in ("allen_cahn", "ks_regular", "ks_chaotic"):
        n_steps, save_every = _reference_steps(cfg, t_final)
        scfg = SpectralConfig(modes, dt, t_final, save_every=save_every)
        if name == "allen_cahn":
            sp = ac_spectral_problem()
            u0 = np.asarray(get_problem(name).initial_state(
                grid_1d(sp.domain, modes))["u"])
        elif name == "ks_regular":
            sp = ks_case1_problem()
            u0 = np.asarray(get_problem(name).initial_state(
                grid_1d(sp.domain, modes))["u"])
        else:
            sp = ks_case2_problem()
            u0 = ks_chaotic_ic(SpectralConfig(modes, dt, 0.5,
                                              save_every=round(0.5 / dt)))
            x = grid_1d(sp.domain, modes)
            save_grid(out / "reference_ic.grid",
                      GridSolution(np.array([0.0]), (x,),
                                   u0[None, :, None], ("u",)),
                      meta={"problem": name, "dt": dt, "modes": modes,
                            "warmup_horizon": 0.5})
        sol = etdrk4_solve(sp, u0, scfg)
        meta.update(method="etdrk4", modes=modes)
    elif name == "ns2d":
        n_steps, save_every = _reference_steps(cfg, t_final)
        re = get_problem(name).constants["re"]
        w0 = random_initial_vorticity(cfg.train.seed, 5.0, modes)
        sol = ns2d_reference(w0, re, SpectralConfig(modes, dt, t_final,
                                                    save_every=save_every))
        meta.update(method="ifrk4", modes=modes, re=re,
                    seed=cfg.train.seed)
    else:
        raise CliError(f"no reference recipe for problem {name!r}")

    path = out / "reference.grid"
    save_grid(path, sol, meta=meta)
    print(f"wrote {path} ({sol.t.shape[0]} frames, "
          f"components {', '.join(sol.components)})")
    return 0


# ---------------------------------------------------------------------------
# eval

def _load_run(run_dir: str):
    run = Path(run_dir)
    cfg = load_config(run / "resolved_config.ini")
    problem = get_problem(cfg.problem)
    paths = sorted(run.glob("window_*.ckpt"))
    if not paths:
        raise CliError(f"no checkpoints found in {run}")
    cps = sorted((load_checkpoint(p) for p in paths),
                 key=lambda c: c.window_index)
    predictor = TimeMarchPredictor(
        problem, cps[0].arch,
        [(c.window, c.params(), c.ic_data()) for c in cps])
    return cfg, problem, predictor


def predict_on_grid(predictor: TimeMarchPredictor,
                    ref: GridSolution) -> GridSolution:
    """Evaluate the stitched network on every reference grid point."""
    problem = predictor.problem
    nt = ref.t.shape[0]
    if problem.spatial_dim == 0:
        return GridSolution(ref.t, (), predictor.evaluate(ref.t),
                            problem.component_names)
    if problem.spatial_dim == 1:
        x = ref.axes[0]
        n = x.shape[0]
        out = predictor.evaluate(np.repeat(ref.t, n), x=np.tile(x, nt))
        return GridSolution(ref.t, ref.axes,
                            out.reshape(nt, n, out.shape[1]),
                            problem.component_names)
    ax, ay = ref.axes
    X, Y = np.meshgrid(ax, ay, indexing="ij")
    n = X.size
    out = predictor.evaluate(np.repeat(ref.t, n),
                             x=np.tile(X.ravel(), nt),
                             y=np.tile(Y.ravel(), nt))
    return GridSolution(ref.t, ref.axes,
                        out.reshape(nt, ax.shape[0], ay.shape[0],
                                    out.shape[1]),
                        problem.component_names)


def _write_spectra(out: Path, tag: str, sol: GridSolution,
                   times: np.ndarray) -> None:
    iu = sol.component_index("u")
    iv = sol.component_index("v")
    for j, t in enumerate(times):
        i = sol.time_index(t)
        frame = sol.values[i]
        k, E = energy_spectrum(frame[..., iu], frame[..., iv])
        write_spectrum_csv(out / f"spectrum_{tag}_{j:02d}.csv", k, E,
                           t=float(sol.t[i]))


def _ntk_profile(cfg: ExperimentConfig, problem: ProblemDefinition,
                 predictor: TimeMarchPredictor, times: np.ndarray,
                 points: int) -> np.ndarray:
    if problem.spatial_dim == 0:
        x = y = None
    elif problem.spatial_dim == 1:
        x, y = uniform_spatial_grid(problem.domain, points)
    else:
        side = math.isqrt(points)
        x, y = uniform_spatial_grid(problem.domain, side * side)
    rates = np.empty(times.shape[0])
    for j, t in enumerate(times):
        k = predictor.window_index(t)
        window, params, ic_data = predictor.windows[k]
        rates[j] = ntk_convergence_rate(problem, params, predictor.arch,
                                        float(t), x=x, y=y, window=window,
                                        ic_data=ic_data)
    return rates


def cmd_eval(args: argparse.Namespace) -> int:
    ref = load_grid(args.reference)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)

    cfg = problem = predictor = None
    if args.pred is not None:
        pred = load_grid(args.pred)
    elif args.run_dir is not None:
        cfg, problem, predictor = _load_run(args.run_dir)
        pred = predict_on_grid(predictor, ref)
    else:
        raise CliError("eval needs --run-dir or --pred")

    for name in pred.components:
        if name not in ref.components:
            raise CliError(f"reference grid is missing component {name!r}")

    if args.save_pred:
        save_grid(out / "prediction.grid", pred)

    pairs = [(name, relative_l2(pred, ref, component=name))
             for name in pred.components]
    write_errors_csv(out / "errors.csv", pairs)
    profiles = {name: per_time_relative_l2(pred, ref, name)
                for name in pred.components}
    write_per_time_errors_csv(out / "errors_per_time.csv", ref.t, profiles)
    for name, err in pairs:
        print(f"relative_l2 {name} {err:.6e}")

    if args.spectrum_times:
        if len(ref.axes) != 2:
            raise CliError("spectra need a two-dimensional grid")
        times = _parse_times(args.spectrum_times)
        _write_spectra(out, "ref", ref, times)
        _write_spectra(out, "pred", pred, times)
    if args.ntk_times:
        if predictor is None:
            raise CliError("the alignment profile needs --run-dir")
        times = _parse_times(args.ntk_times)
        rates = _ntk_profile(cfg, problem, predictor, times, args.ntk_points)
        write_ntk_csv(out / "ntk.csv", times, rates)
    return 0


# ---------------------------------------------------------------------------
# ntk / spectrum standalone

def cmd_ntk(args: argparse.Namespace) -> int:
    cfg, problem, predictor = _load_run(args.run_dir)
    times = _parse_times(args.times)
    rates = _ntk_profile(cfg, problem, predictor, times, args.points)
    out = Path(args.out_dir or args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ntk_csv(out / "ntk.csv", times, rates)
    for t, r in zip(times, rates):
        print(f"t {t:g} rate {r:.6e}")
    return 0


def cmd_spectrum(args: argparse.Namespace) -> int:
    sol = load_grid(args.grid)
    if len(sol.axes) != 2:
        raise CliError("spectra need a two-dimensional grid")
    times = _parse_times(args.times)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    _write_spectra(out, "grid", sol, times)
    print(f"wrote {times.shape[0]} spectrum files to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalpinn",
        description="Causally weighted physics-informed training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment config file (INI)")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--workers", type=int,
                       help="gradient worker processes")
        p.add_argument("--no-stop-criterion", action="store_true",
                       help="disable the weight-threshold rung advance")
        p.add_argument("--out-dir", help="output directory")
        p.add_argument("--precision", choices=("f64", "f32"),
                       help="parameter storage precision")

    p = sub.add_parser("train", help="run the windowed training loop")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reference", help="write a validation trajectory")
    common(p, config_required=False)
    p.add_argument("--self-test", action="store_const",
                   const="taylor_green", default=None,
                   help="check the flow solver against the decaying "
                        "cellular solution and exit")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("eval", help="compare predictions against a reference")
    p.add_argument("--reference", required=True, help="reference grid file")
    p.add_argument("--run-dir", help="training output directory")
    p.add_argument("--pred", help="prediction grid file (instead of a run)")
    p.add_argument("--save-pred", action="store_true",
                   help="write the evaluated prediction as a grid file")
    p.add_argument("--out-dir", help="output directory (default: cwd)")
    p.add_argument("--spectrum-times",
                   help="comma list of times for energy spectra")
    p.add_argument("--ntk-times",
                   help="comma list of times for the alignment profile")
    p.add_argument("--ntk-points", type=int, default=128,
                   help="spatial points per alignment sample")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ntk", help="gradient-alignment profile of a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--times", required=True, help="comma list of times")
    p.add_argument("--points", type=int, default=128)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_ntk)

    p = sub.add_parser("spectrum", help="energy spectra of a 2D grid file")
    p.add_argument("--grid", required=True, help="grid file")
    p.add_argument("--times", required=True, help="comma list of times")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, StorageError, ReferenceRejected,
            TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

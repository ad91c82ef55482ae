"""INI experiment configuration with fully-resolved per-benchmark
defaults.

A file needs only `[experiment] problem = ...`; everything else has a
benchmark-specific default that any key can override.  Unknown sections or
keys are rejected instead of ignored so typos cannot silently change an
experiment.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .models import ArchitectureSpec
from .problems import get_problem
from .training import DEFAULT_EPSILONS, TrainConfig

# depth/width/collocation sizes per benchmark at full scale; desk-size runs
# override these explicitly in their config files
BENCHMARK_DEFAULTS: dict[str, dict] = {
    "allen_cahn": {
        "architecture": {"kind": "modified_mlp", "depth": 6, "width": 128,
                         "fourier_m": 10},
        "training": {"n_t": 100, "n_x": 256, "windows": 1, "t_final": 1.0,
                     "max_iters_per_eps": 300_000,
                     "sampling": "fixed_mesh"},
        "reference": {"modes": 512, "dt": 1e-4, "frames": 100},
    },
    "lorenz": {
        "architecture": {"kind": "mlp", "depth": 5, "width": 512},
        "training": {"n_t": 256, "n_x": 1, "windows": 40, "t_final": 20.0,
                     "max_iters_per_eps": 100_000,
                     "sampling": "fixed_mesh"},
        "reference": {"dt": 1e-3, "frames": 2000},
    },
    "ks_regular": {
        "architecture": {"kind": "modified_mlp", "depth": 5, "width": 256,
                         "fourier_m": 10},
        "training": {"n_t": 32, "n_x": 64, "windows": 10, "t_final": 1.0,
                     "max_iters_per_eps": 200_000, "sampling": "resample"},
        "reference": {"modes": 512, "dt": 1e-4, "frames": 100},
    },
    "ks_chaotic": {
        "architecture": {"kind": "modified_mlp", "depth": 10, "width": 128,
                         "fourier_m": 10},
        "training": {"n_t": 32, "n_x": 256, "windows": 5, "t_final": 0.5,
                     "max_iters_per_eps": 200_000, "sampling": "resample"},
        "reference": {"modes": 512, "dt": 1e-4, "frames": 100},
    },
    "ns2d": {
        "architecture": {"kind": "modified_mlp", "depth": 6, "width": 128,
                         "fourier_m": 5, "fourier_n": 5},
        # spatial batches are random draws, so n_x need not be square; the
        # initial-slice mesh gets its own square size
        "training": {"n_t": 64, "n_x": 512, "n_ic": 4096, "windows": 10,
                     "t_final": 1.0, "max_iters_per_eps": 100_000,
                     "sampling": "resample"},
        "reference": {"modes": 256, "dt": 1e-3, "frames": 100},
    },
}

_EXPERIMENT_KEYS = {"problem", "seed", "workers", "out_dir", "precision"}
_ARCHITECTURE_KEYS = {"kind", "depth", "width", "fourier_m", "fourier_n",
                      "time_concat"}
_TRAINING_KEYS = {"n_t", "n_x", "n_ic", "windows", "t_final", "window_dt",
                  "epsilons", "delta", "lambda_ic", "lr_init", "lr_decay",
                  "lr_interval", "max_iters_per_eps", "sampling",
                  "stop_criterion", "snapshot_every"}
_REFERENCE_KEYS = {"modes", "dt", "frames"}
_SECTIONS = {"experiment": _EXPERIMENT_KEYS,
             "architecture": _ARCHITECTURE_KEYS,
             "training": _TRAINING_KEYS,
             "reference": _REFERENCE_KEYS}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    train: TrainConfig
    out_dir: str = "runs/out"
    reference: dict = field(default_factory=dict)

    @property
    def problem(self) -> str:
        return self.train.problem


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: cannot read {raw!r} as a boolean")


def _build_arch(problem_name: str, arch_keys: dict) -> ArchitectureSpec:
    problem = get_problem(problem_name)
    kind = arch_keys["kind"]
    depth = int(arch_keys["depth"])
    width = int(arch_keys["width"])
    time_concat = arch_keys.get("time_concat", True)

    embedding = None
    if problem.spatial_dim == 1:
        m = int(arch_keys["fourier_m"])
        period = problem.domain[0][1] - problem.domain[0][0]
        embedding = ("fourier_1d", m, period)
        in_dim = 2 * m + 1 + (1 if time_concat else 0)
    elif problem.spatial_dim == 2:
        m = int(arch_keys["fourier_m"])
        n = int(arch_keys.get("fourier_n", m))
        px = problem.domain[0][1] - problem.domain[0][0]
        py = problem.domain[1][1] - problem.domain[1][0]
        embedding = ("fourier_2d", m, n, px, py)
        in_dim = 4 * m * n + (1 if time_concat else 0)
    else:
        in_dim = 1 if time_concat else 0
    return ArchitectureSpec(kind=kind, depth=depth, width=width,
                            in_dim=in_dim, out_dim=problem.n_out,
                            embedding=embedding, time_concat=time_concat)


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")

    if not parser.has_option("experiment", "problem"):
        raise ConfigError("missing [experiment] problem name")
    problem_name = parser["experiment"]["problem"].strip()
    try:
        defaults = BENCHMARK_DEFAULTS[problem_name]
    except KeyError:
        known = ", ".join(sorted(BENCHMARK_DEFAULTS))
        raise ConfigError(f"unknown problem {problem_name!r} "
                          f"(known: {known})") from None

    arch_keys = dict(defaults["architecture"])
    if parser.has_section("architecture"):
        for key, raw in parser["architecture"].items():
            arch_keys[key] = (_parse_bool(raw, key)
                              if key == "time_concat" else raw)
    arch = _build_arch(problem_name, arch_keys)

    tr = dict(defaults["training"])
    user_tr = dict(parser["training"]) if parser.has_section(
        "training") else {}

    def pick(key, conv, fallback):
        if key in user_tr:
            return conv(user_tr[key])
        return tr.get(key, fallback)

    windows = pick("windows", int, None)
    t_final = pick("t_final", float, None)
    if "window_dt" in user_tr:
        dt = float(user_tr["window_dt"])
    else:
        dt = t_final / windows
    epsilons = DEFAULT_EPSILONS
    if "epsilons" in user_tr:
        epsilons = tuple(float(v) for v in user_tr["epsilons"].split(","))
    lambda_ic = None
    if user_tr.get("lambda_ic", "").strip():
        lambda_ic = float(user_tr["lambda_ic"])
    n_ic = tr.get("n_ic")
    if "n_ic" in user_tr:
        n_ic = (int(user_tr["n_ic"]) if user_tr["n_ic"].strip() else None)

    exp = dict(parser["experiment"]) if parser.has_section(
        "experiment") else {}
    try:
        train = TrainConfig(
            problem=problem_name, arch=arch,
            n_t=pick("n_t", int, None), n_x=pick("n_x", int, None),
            n_ic=n_ic,
            windows=windows, dt=dt, t_final=t_final,
            epsilons=epsilons,
            delta=pick("delta", float, 0.99),
            lambda_ic=lambda_ic,
            lr_init=pick("lr_init", float, 1e-3),
            lr_decay=pick("lr_decay", float, 0.9),
            lr_interval=pick("lr_interval", int, 5000),
            max_iters_per_eps=pick("max_iters_per_eps", int, None),
            sampling=pick("sampling", str, "fixed_mesh"),
            seed=int(exp.get("seed", 0)),
            workers=int(exp.get("workers", 1)),
            stop_criterion=(_parse_bool(user_tr["stop_criterion"],
                                        "stop_criterion")
                            if "stop_criterion" in user_tr else True),
            snapshot_every=pick("snapshot_every", int, 1000),
            precision=exp.get("precision", "f64"))
    except ValueError as e:
        raise ConfigError(str(e)) from None

    if get_problem(problem_name).spatial_dim == 2:
        side = math.isqrt(train.ic_points)
        if side * side != train.ic_points:
            raise ConfigError(
                f"initial-slice mesh size {train.ic_points} is not a "
                "perfect square (set n_ic for a 2D problem)")

    reference = dict(defaults.get("reference", {}))
    if parser.has_section("reference"):
        for key, raw in parser["reference"].items():
            reference[key] = (int(raw) if key in ("modes", "frames")
                              else float(raw))

    return ExperimentConfig(train=train,
                            out_dir=exp.get("out_dir", "runs/out"),
                            reference=reference)


def resolved_config_text(cfg: ExperimentConfig) -> str:
    """Render the fully-resolved configuration back to INI so every run
    records the exact values it used."""
    t = cfg.train
    arch = t.arch
    lines = ["[experiment]",
             f"problem = {t.problem}",
             f"seed = {t.seed}",
             f"workers = {t.workers}",
             f"out_dir = {cfg.out_dir}",
             f"precision = {t.precision}",
             "",
             "[architecture]",
             f"kind = {arch.kind}",
             f"depth = {arch.depth}",
             f"width = {arch.width}"]
    if arch.embedding is not None and arch.embedding[0] == "fourier_1d":
        lines.append(f"fourier_m = {arch.embedding[1]}")
    elif arch.embedding is not None:
        lines.append(f"fourier_m = {arch.embedding[1]}")
        lines.append(f"fourier_n = {arch.embedding[2]}")
    lines += [f"time_concat = {str(arch.time_concat).lower()}",
              "",
              "[training]",
              f"n_t = {t.n_t}",
              f"n_x = {t.n_x}",
              f"n_ic = {'' if t.n_ic is None else t.n_ic}",
              f"windows = {t.windows}",
              f"t_final = {t.t_final!r}",
              f"window_dt = {t.dt!r}",
              "epsilons = " + ", ".join(repr(e) for e in t.epsilons),
              f"delta = {t.delta!r}",
              f"lambda_ic = {'' if t.lambda_ic is None else repr(t.lambda_ic)}",
              f"lr_init = {t.lr_init!r}",
              f"lr_decay = {t.lr_decay!r}",
              f"lr_interval = {t.lr_interval}",
              f"max_iters_per_eps = {t.max_iters_per_eps}",
              f"sampling = {t.sampling}",
              f"stop_criterion = {str(t.stop_criterion).lower()}",
              f"snapshot_every = {t.snapshot_every}",
              "",
              "[reference]"]
    for key in sorted(cfg.reference):
        lines.append(f"{key} = {cfg.reference[key]!r}")
    return "\n".join(lines) + "\n"

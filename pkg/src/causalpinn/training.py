"""Causal-weighted training: slice-decomposed residual loss, weight
annealing with a stopping criterion, Adam, time marching, and multi-worker
gradient averaging.

The residual loss is split by time slice.  Each slice's weight decays
exponentially in the accumulated loss of all earlier slices, so later slices
only start training once earlier ones are resolved.  Weights are frozen
constants within an iteration; training advances through an increasing
ladder of decay rates, moving on when every weight clears a threshold.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .models import (ArchitectureSpec, build_input_jets, init_params,
                     network_forward)
from .problems import (ProblemDefinition, get_problem, next_window_state,
                       wrap_output)
from .tape import BufferPool, ParameterSet, Tape


class TrainingDiverged(RuntimeError):
    """Raised when a loss, slice residual, or gradient goes non-finite."""


DEFAULT_EPSILONS = (1e-2, 1e-1, 1.0, 10.0, 100.0)


@dataclass
class TrainConfig:
    problem: str
    arch: ArchitectureSpec
    n_t: int
    n_x: int
    windows: int
    dt: float
    t_final: float
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    delta: float = 0.99
    lambda_ic: float | None = None      # None: problem default
    lr_init: float = 1e-3
    lr_decay: float = 0.9
    lr_interval: int = 5000
    max_iters_per_eps: int = 1000
    sampling: str = "fixed_mesh"        # or "resample"
    seed: int = 0
    workers: int = 1
    stop_criterion: bool = True
    snapshot_every: int = 1000
    # "f32" keeps the arithmetic in double but rounds the parameters to
    # single precision after every optimizer update
    precision: str = "f64"
    # initial-slice mesh size; None means n_x.  A 2D problem needs this to
    # be a perfect square even when n_x (random spatial batch) is not.
    n_ic: int | None = None

    @property
    def ic_points(self) -> int:
        return self.n_x if self.n_ic is None else self.n_ic

    def __post_init__(self):
        if list(self.epsilons) != sorted(set(self.epsilons)):
            raise ValueError("epsilon ladder must be strictly increasing")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.sampling not in ("fixed_mesh", "resample"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.n_t < 1 or self.n_x < 1:
            raise ValueError("n_t and n_x must be positive")
        if self.windows < 1:
            raise ValueError("need at least one window")
        if abs(self.windows * self.dt - self.t_final) > 1e-9 * max(
                1.0, abs(self.t_final)):
            raise ValueError(
                f"windows*dt = {self.windows * self.dt} does not cover "
                f"t_final = {self.t_final}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.precision not in ("f64", "f32"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.n_ic is not None and self.n_ic < 1:
            raise ValueError("n_ic must be positive")


@dataclass
class TemporalWeights:
    weights: np.ndarray       # w_0..w_n, frozen (no gradient flows through)
    residuals: np.ndarray     # the slice losses they were computed from
    epsilon: float

    @property
    def min_weight(self) -> float:
        return float(self.weights.min())


@dataclass
class HistoryRow:
    iteration: int
    epsilon: float
    loss_ic: float
    loss_res: float
    min_weight: float
    learning_rate: float
    wall_ms: float

    FIELDS = ("iteration", "epsilon", "loss_ic", "loss_res", "min_weight",
              "learning_rate", "wall_ms")

    def astuple(self):
        return (self.iteration, self.epsilon, self.loss_ic, self.loss_res,
                self.min_weight, self.learning_rate, self.wall_ms)


@dataclass
class OptState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @staticmethod
    def fresh(params: ParameterSet) -> "OptState":
        return OptState({k: np.zeros_like(p) for k, p in params.items()},
                        {k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class RungRecord:
    epsilon: float
    iterations: int
    stopped_by_criterion: bool
    final_min_weight: float


@dataclass
class WindowResult:
    window: tuple[float, float]
    params: ParameterSet
    history: list[HistoryRow]
    snapshots: list[tuple[int, float, np.ndarray, np.ndarray]]
    rungs: list[RungRecord]
    ic_data: dict


# ---------------------------------------------------------------------------
# collocation

def sample_collocation(rng: np.random.Generator, window: tuple[float, float],
                       n_t: int, n_x: int, mode: str,
                       domain: tuple[tuple[float, float], ...]):
    """Interior slice times (ascending) plus the spatial batch.

    Times are cell-centered on a fixed mesh or sorted uniform draws, so the
    window start stays reserved for the initial-condition slice.  Returns
    (times, x, y); spatial entries are None for an ODE problem.
    """
    t0, t1 = window
    if not t1 > t0:
        raise ValueError(f"empty window [{t0}, {t1}]")
    if mode == "fixed_mesh":
        h = (t1 - t0) / n_t
        times = t0 + h * (np.arange(n_t) + 0.5)
    else:
        times = np.sort(rng.uniform(t0, t1, n_t))
    x = y = None
    if len(domain) >= 1:
        if mode == "fixed_mesh":
            x, y = uniform_spatial_grid(domain, n_x)
        else:
            lo, hi = domain[0]
            x = rng.uniform(lo, hi, n_x)
            if len(domain) == 2:
                lo2, hi2 = domain[1]
                y = rng.uniform(lo2, hi2, n_x)
    return times, x, y


def uniform_spatial_grid(domain, n_x: int):
    """Periodic-convention uniform points (right endpoint excluded)."""
    if len(domain) == 1:
        lo, hi = domain[0]
        return lo + (hi - lo) * np.arange(n_x) / n_x, None
    side = math.isqrt(n_x)
    if side * side != n_x:
        raise ValueError(f"n_x = {n_x} is not a square grid size")
    (lx, hx), (ly, hy) = domain
    gx = lx + (hx - lx) * np.arange(side) / side
    gy = ly + (hy - ly) * np.arange(side) / side
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    return X.ravel(), Y.ravel()


# ---------------------------------------------------------------------------
# weights and loss assembly

# Weights this small carry no trainable signal, but exp() output between
# roughly 1e-308 and 1e-324 is subnormal, and subnormal adjoints flowing
# through the backward pass trigger microcode assists that slow the GEMMs
# and kernels by an order of magnitude.  Flush to exact zero well above that.
WEIGHT_FLOOR = 1e-250


def causal_weights(residuals: np.ndarray, epsilon: float) -> TemporalWeights:
    """w_i = exp(-epsilon * sum of all earlier slice losses); w_0 = 1.

    The exponent is nonpositive for nonnegative losses, so no overflow is
    possible.  The weights are data, not a differentiable function.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(residuals[:-1])])
    w = np.exp(-epsilon * csum)
    w[w < WEIGHT_FLOOR] = 0.0
    return TemporalWeights(w, residuals.copy(), epsilon)


def weighted_loss(weights: TemporalWeights, residuals: np.ndarray,
                  n_t: int) -> float:
    if weights.weights.shape != np.shape(residuals):
        raise ValueError("weights and residuals must align")
    return float(np.dot(weights.weights, residuals) / n_t)


def temporal_residual(problem: ProblemDefinition, params: ParameterSet,
                      arch: ArchitectureSpec, t_i: float,
                      x: np.ndarray | None = None,
                      y: np.ndarray | None = None,
                      window: tuple[float, float] = (0.0, 1.0),
                      ic_data: dict | None = None) -> float:
    """Mean squared residual at one time slice (lambda-weighted for systems
    with multiple residual equations)."""
    space = problem.space()
    if arch.in_dim and space.degree < problem.input_degree:
        raise ValueError("jet degree insufficient for problem")
    n = 1 if x is None else x.shape[0]
    t = np.full(n, float(t_i))
    tape = Tape(params, space)
    X = build_input_jets(arch, space, t, window, x=x, y=y)
    out = network_forward(tape, arch, tape.const(X, jet=True))
    out = wrap_output(tape, problem, out, t, window[0], ic_data or {})
    r = problem.residual(tape, out)
    return float(np.mean(tape.nodes[r].primal))


# ---------------------------------------------------------------------------
# optimizer

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


def learning_rate(cfg: TrainConfig, step: int) -> float:
    return cfg.lr_init * cfg.lr_decay ** (step // cfg.lr_interval)


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray],
              opt: OptState, lr: float) -> None:
    """In-place Adam update with bias correction."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {name!r}")
    opt.step += 1
    t = opt.step
    c1 = 1.0 - ADAM_B1 ** t
    c2 = 1.0 - ADAM_B2 ** t
    for name, g in grads.items():
        m = opt.m[name]
        v = opt.v[name]
        m *= ADAM_B1
        m += (1.0 - ADAM_B1) * g
        v *= ADAM_B2
        v += (1.0 - ADAM_B2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def _round_params_f32(params: ParameterSet) -> None:
    """Clamp every parameter to its nearest single-precision value while
    keeping double storage (optimizer moments stay double)."""
    for name in params:
        arr = params[name]
        arr[...] = arr.astype(np.float32)


# ---------------------------------------------------------------------------
# one training step: batched forward over every slice at once

def _window_batch(problem: ProblemDefinition, cfg: TrainConfig,
                  window: tuple[float, float], times: np.ndarray,
                  x, y, ic_x, ic_y):
    """Physical coordinates for the IC slice followed by every interior
    slice (slice-major, spatial batch repeated per slice)."""
    n_t = times.shape[0]
    has_ic = not problem.hard_ic
    if problem.spatial_dim == 0:
        t_all = times
        return t_all, None, None, 0
    n_ic = ic_x.shape[0] if has_ic else 0
    t_parts = []
    x_parts = []
    y_parts = [] if problem.spatial_dim == 2 else None
    if has_ic:
        t_parts.append(np.full(n_ic, window[0]))
        x_parts.append(ic_x)
        if y_parts is not None:
            y_parts.append(ic_y)
    t_parts.append(np.repeat(times, x.shape[0]))
    x_parts.append(np.tile(x, n_t))
    if y_parts is not None:
        y_parts.append(np.tile(y, n_t))
    t_all = np.concatenate(t_parts)
    x_all = np.concatenate(x_parts)
    y_all = np.concatenate(y_parts) if y_parts is not None else None
    return t_all, x_all, y_all, n_ic


def _iteration_batch(problem, cfg, arch, space, window, times, x, y,
                     ic_x, ic_y):
    """Batch layout plus the input jets, which depend only on coordinates
    and so can be built once per window on a fixed mesh."""
    t_all, x_all, y_all, n_ic = _window_batch(problem, cfg, window, times,
                                              x, y, ic_x, ic_y)
    X = build_input_jets(arch, space, t_all, window, x=x_all, y=y_all)
    return times.shape[0], n_ic, t_all, X


def _slice_losses_and_grads(problem, cfg, arch, space, params, window,
                            batch, ic_data, epsilon, pool, lambda_ic):
    """One forward/backward pass; returns (slice losses, weights, grads,
    loss value)."""
    n_t, n_ic, t_all, X = batch

    tape = Tape(params, space, pool)
    out = network_forward(tape, arch, tape.const(X, jet=True))
    out = wrap_output(tape, problem, out, t_all, window[0], ic_data)
    point_sq = problem.residual(tape, out)

    n_total = t_all.shape[0]
    if n_ic:
        interior = tape.slice_rows(point_sq, n_ic, n_total)
        res_means = tape.mean_slices(interior, n_t)
        ic_point = problem.ic_sqerr(tape, out, ic_data, n_ic)
        ic_mean = tape.mean_all(ic_point)
        slices = tape.concat(tape.scale(ic_mean, lambda_ic), res_means)
        loss_ic = tape.nodes[ic_mean].primal
    else:
        slices = tape.mean_slices(point_sq, n_t)
        loss_ic = 0.0

    slice_vals = tape.nodes[slices].primal
    bad = np.flatnonzero(~np.isfinite(slice_vals))
    if bad.size:
        raise TrainingDiverged(
            f"non-finite slice loss at index {int(bad[0])} "
            f"(epsilon={epsilon})")
    tw = causal_weights(slice_vals, epsilon)
    loss = tape.scale(tape.dot(slices, tape.const(tw.weights)), 1.0 / n_t)
    grads = tape.gradient(loss)
    loss_val = float(tape.nodes[loss].primal)
    loss_res = float(slice_vals[1:].mean()) if n_ic else \
        float(slice_vals.mean())
    tape.release()
    return tw, grads, loss_val, float(loss_ic), loss_res


# ---------------------------------------------------------------------------
# window training (Algorithm: anneal epsilon, stop when weights saturate)

class _WorkerPool:
    """Per-worker RNG streams, buffer pools, and a shared thread pool.

    Worker 0's stream is the serial stream: with one worker the parallel
    path degenerates to exactly the serial computation.
    """

    def __init__(self, cfg: TrainConfig, window_index: int):
        root = np.random.SeedSequence((cfg.seed, window_index))
        children = root.spawn(max(cfg.workers, 1))
        self.rngs = [np.random.default_rng(s) for s in children]
        self.pools = [BufferPool() for _ in children]
        self.executor = (ThreadPoolExecutor(max_workers=cfg.workers)
                         if cfg.workers > 1 else None)

    def shutdown(self):
        if self.executor is not None:
            self.executor.shutdown(wait=True)


def parallel_gradient(problem, cfg, arch, space, params, window, ic_x, ic_y,
                      ic_data, epsilon, lambda_ic, wp: _WorkerPool,
                      prebuilt=None):
    """Average the per-worker gradients in fixed worker order.

    Each worker samples its own collocation batch from its own stream and
    runs an independent tape; a prebuilt fixed-mesh batch is shared.  The
    first worker's diagnostics (weights, losses) are reported.
    """
    def one(i):
        if prebuilt is not None:
            batch = prebuilt
        else:
            rng = wp.rngs[i]
            times, x, y = sample_collocation(rng, window, cfg.n_t, cfg.n_x,
                                             cfg.sampling, problem.domain)
            batch = _iteration_batch(problem, cfg, arch, space, window,
                                     times, x, y, ic_x, ic_y)
        return _slice_losses_and_grads(problem, cfg, arch, space, params,
                                       window, batch, ic_data, epsilon,
                                       wp.pools[i], lambda_ic)

    k = cfg.workers
    if k == 1:
        return one(0)
    results = list(wp.executor.map(one, range(k)))
    tw, _, loss_val, loss_ic, loss_res = results[0]
    mean_grads = {}
    for name in results[0][1]:
        acc = results[0][1][name].copy()
        for i in range(1, k):
            acc += results[i][1][name]
        mean_grads[name] = acc / k
    return tw, mean_grads, loss_val, loss_ic, loss_res


def train_window(problem: ProblemDefinition, cfg: TrainConfig,
                 window: tuple[float, float], ic_data: dict,
                 params: ParameterSet | None = None,
                 window_index: int = 0,
                 progress=None) -> WindowResult:
    arch = cfg.arch
    space = problem.space()
    if space.degree < problem.input_degree:
        raise ValueError("jet degree insufficient for problem residual")
    if params is None:
        params = init_params(arch, cfg.seed + window_index)
    lambda_ic = (problem.lambda_ic if cfg.lambda_ic is None
                 else cfg.lambda_ic)

    ic_x = ic_y = None
    if problem.spatial_dim >= 1:
        ic_x, ic_y = uniform_spatial_grid(problem.domain, cfg.ic_points)

    prebuilt = None
    if cfg.sampling == "fixed_mesh":
        times, x, y = sample_collocation(np.random.default_rng(0), window,
                                         cfg.n_t, cfg.n_x, cfg.sampling,
                                         problem.domain)
        prebuilt = _iteration_batch(problem, cfg, arch, space, window,
                                    times, x, y, ic_x, ic_y)

    if cfg.precision == "f32":
        _round_params_f32(params)
    wp = _WorkerPool(cfg, window_index)
    opt = OptState.fresh(params)
    history: list[HistoryRow] = []
    snapshots: list[tuple[int, float, np.ndarray, np.ndarray]] = []
    rungs: list[RungRecord] = []
    iteration = 0
    try:
        for epsilon in cfg.epsilons:
            stopped = False
            rung_iters = 0
            min_w = 0.0
            for _ in range(cfg.max_iters_per_eps):
                tic = time.perf_counter()
                tw, grads, loss_val, loss_ic, loss_res = parallel_gradient(
                    problem, cfg, arch, space, params, window, ic_x, ic_y,
                    ic_data, epsilon, lambda_ic, wp, prebuilt)
                if not math.isfinite(loss_val):
                    raise TrainingDiverged(
                        f"non-finite total loss at iteration {iteration}")
                lr = learning_rate(cfg, iteration)
                adam_step(params, grads, opt, lr)
                if cfg.precision == "f32":
                    _round_params_f32(params)
                wall = (time.perf_counter() - tic) * 1e3
                iteration += 1
                rung_iters += 1
                min_w = tw.min_weight
                history.append(HistoryRow(iteration, epsilon, loss_ic,
                                          loss_res, min_w, lr, wall))
                if (iteration % cfg.snapshot_every == 0
                        or rung_iters == 1):
                    snapshots.append((iteration, epsilon,
                                      tw.weights.copy(),
                                      tw.residuals.copy()))
                if progress is not None:
                    progress(window_index, iteration, epsilon, loss_val,
                             min_w)
                if cfg.stop_criterion and min_w > cfg.delta:
                    stopped = True
                    break
            rungs.append(RungRecord(epsilon, rung_iters, stopped, min_w))
    finally:
        wp.shutdown()
    return WindowResult(window, params, history, snapshots, rungs, ic_data)


def time_march(problem: ProblemDefinition, cfg: TrainConfig,
               initial_data: dict | None = None,
               progress=None) -> list[WindowResult]:
    """Train every window in order, handing each window's terminal state to
    the next as its initial condition."""
    ic_x = ic_y = None
    if problem.spatial_dim >= 1:
        ic_x, ic_y = uniform_spatial_grid(problem.domain, cfg.ic_points)

    if initial_data is None:
        if problem.spatial_dim == 0:
            initial_data = problem.initial_state()
        elif problem.spatial_dim == 1:
            initial_data = problem.initial_state(ic_x)
        else:
            initial_data = problem.initial_state(ic_x, ic_y)
        if initial_data is None:
            raise ValueError(
                f"problem {problem.name!r} needs externally supplied "
                "initial data")

    results: list[WindowResult] = []
    params = None
    ic_data = initial_data
    for k in range(cfg.windows):
        window = (k * cfg.dt, (k + 1) * cfg.dt)
        try:
            res = train_window(problem, cfg, window, ic_data, params=params,
                               window_index=k, progress=progress)
        except TrainingDiverged as e:
            raise TrainingDiverged(f"window {k} {window}: {e}") from e
        results.append(res)
        # warm start the next window from the trained parameters
        params = res.params.copy()
        if k + 1 < cfg.windows:
            ic_data = next_window_state(problem, res.params, cfg.arch,
                                        window, ic_x, ic_y, ic_data)
    return results


class TimeMarchPredictor:
    """Dispatch pointwise queries to the window whose span contains t."""

    def __init__(self, problem: ProblemDefinition, arch: ArchitectureSpec,
                 windows: list[tuple[tuple[float, float], ParameterSet,
                                     dict]]):
        self.problem = problem
        self.arch = arch
        self.windows = windows

    @staticmethod
    def from_results(problem, arch, results: list[WindowResult]):
        return TimeMarchPredictor(
            problem, arch,
            [(r.window, r.params, r.ic_data) for r in results])

    def window_index(self, t: float) -> int:
        t0 = self.windows[0][0][0]
        dt = self.windows[0][0][1] - t0
        k = int(np.floor((t - t0) / dt + 1e-12))
        return min(max(k, 0), len(self.windows) - 1)

    def evaluate(self, t: np.ndarray, x: np.ndarray | None = None,
                 y: np.ndarray | None = None) -> np.ndarray:
        """(batch, n_components) predictions at physical points."""
        from .problems import evaluate_network
        t = np.asarray(t, dtype=np.float64)
        idx = np.array([self.window_index(v) for v in t])
        n_comp = len(self.problem.component_names)
        out = np.empty((t.shape[0], n_comp))
        for k in np.unique(idx):
            sel = idx == k
            window, params, ic_data = self.windows[k]
            out[sel] = evaluate_network(
                self.problem, params, self.arch, window, t[sel],
                x=None if x is None else x[sel],
                y=None if y is None else y[sel], ic_data=ic_data)
        return out

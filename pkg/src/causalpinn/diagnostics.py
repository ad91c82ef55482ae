"""Evaluation utilities: solution grids, relative L2 error, the per-slice
training-rate trace that exposes which time slices train fastest, and
kinetic energy spectra for 2D flows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ArchitectureSpec, build_input_jets, network_forward
from .problems import ProblemDefinition, wrap_output
from .tape import ParameterSet, Tape


@dataclass
class GridSolution:
    """Field values sampled on a regular space-time grid.

    values has shape (n_t, *spatial extents, n_components); axes are the
    per-dimension coordinate arrays (empty tuple for an ODE trajectory).
    """

    t: np.ndarray
    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    components: tuple[str, ...]

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.axes = tuple(np.asarray(a, dtype=np.float64)
                          for a in self.axes)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.components = tuple(self.components)
        expected = (self.t.shape[0],
                    *(a.shape[0] for a in self.axes),
                    len(self.components))
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} does not "
                             f"match axes/components {expected}")
        if self.t.shape[0] > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("time axis must be strictly increasing")
        for a in self.axes:
            if a.shape[0] > 1 and not np.all(np.diff(a) > 0):
                raise ValueError("spatial axes must be strictly increasing")

    @property
    def n_components(self) -> int:
        return len(self.components)

    def component_index(self, name: str) -> int:
        try:
            return self.components.index(name)
        except ValueError:
            raise KeyError(f"no component {name!r}; have "
                           f"{self.components}") from None

    def component(self, name: str) -> np.ndarray:
        return self.values[..., self.component_index(name)]

    def time_index(self, t: float) -> int:
        """Index of the grid time nearest to t."""
        return int(np.argmin(np.abs(self.t - t)))


def _same_axes(pred: GridSolution, ref: GridSolution) -> bool:
    if pred.t.shape != ref.t.shape or not np.allclose(
            pred.t, ref.t, rtol=0, atol=1e-12):
        return False
    if len(pred.axes) != len(ref.axes):
        return False
    return all(a.shape == b.shape
               and np.allclose(a, b, rtol=0, atol=1e-12)
               for a, b in zip(pred.axes, ref.axes))


def relative_l2(pred: GridSolution, ref: GridSolution,
                component: str | None = None,
                t_range: tuple[float, float] | None = None) -> float:
    """||pred - ref||_2 / ||ref||_2 over a time slab on a common grid."""
    if not _same_axes(pred, ref):
        raise ValueError("prediction and reference grids do not match")
    if component is None:
        if pred.components != ref.components:
            raise ValueError("component lists differ; pick one explicitly")
        p, r = pred.values, ref.values
    else:
        p = pred.component(component)
        r = ref.component(component)
    if t_range is not None:
        lo, hi = t_range
        mask = (ref.t >= lo) & (ref.t <= hi)
        if not np.any(mask):
            raise ValueError(f"no grid times inside {t_range}")
        p, r = p[mask], r[mask]
    denom = float(np.linalg.norm(r.ravel()))
    if denom == 0.0:
        raise ValueError("reference norm is zero")
    return float(np.linalg.norm((p - r).ravel())) / denom


def per_time_relative_l2(pred: GridSolution, ref: GridSolution,
                         component: str) -> np.ndarray:
    """Relative L2 at every grid time separately (zero-norm slices get nan)."""
    if not _same_axes(pred, ref):
        raise ValueError("prediction and reference grids do not match")
    p = pred.component(component).reshape(pred.t.shape[0], -1)
    r = ref.component(component).reshape(ref.t.shape[0], -1)
    denom = np.linalg.norm(r, axis=1)
    num = np.linalg.norm(p - r, axis=1)
    out = np.full(denom.shape, np.nan)
    nz = denom > 0
    out[nz] = num[nz] / denom[nz]
    return out


# ---------------------------------------------------------------------------
# per-slice training-rate trace

def ntk_convergence_rate(problem: ProblemDefinition, params: ParameterSet,
                         arch: ArchitectureSpec, t_i: float,
                         x: np.ndarray | None = None,
                         y: np.ndarray | None = None,
                         window: tuple[float, float] = (0.0, 1.0),
                         ic_data: dict | None = None) -> float:
    """Mean over the spatial batch of the squared parameter-gradient norm
    of the raw equation residuals at one time slice.

    This is the kernel trace divided by the batch size: large values mean
    the optimizer moves this slice's residual fastest.  Summed over the
    equations of a system.
    """
    if problem.residual_parts is None:
        raise ValueError(f"problem {problem.name!r} exposes no raw "
                         "residuals")
    space = problem.space()
    n = 1 if x is None else x.shape[0]
    t = np.full(n, float(t_i))
    tape = Tape(params, space)
    X = build_input_jets(arch, space, t, window, x=x, y=y)
    out = network_forward(tape, arch, tape.const(X, jet=True))
    out = wrap_output(tape, problem, out, t, window[0], ic_data or {})
    total = np.zeros(n)
    for part in problem.residual_parts(tape, out):
        total += tape.per_sample_grad_sqnorm(part)
    return float(total.mean())


def convergence_rate_profile(problem, params, arch, times: np.ndarray,
                             x: np.ndarray | None = None,
                             y: np.ndarray | None = None,
                             window: tuple[float, float] = (0.0, 1.0),
                             ic_data: dict | None = None) -> np.ndarray:
    return np.array([ntk_convergence_rate(problem, params, arch, t, x=x,
                                          y=y, window=window,
                                          ic_data=ic_data)
                     for t in times])


# ---------------------------------------------------------------------------
# kinetic energy spectrum

def energy_spectrum(u: np.ndarray, v: np.ndarray):
    """Annulus-binned, total-normalized kinetic energy of a 2D periodic
    velocity field.

    Returns (k, E) with integer bins covering the half-open annuli
    k - 1/2 <= |kappa| < k + 1/2 out to the grid corners, so sum(E) = 1.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != u.shape[1] or u.shape != v.shape:
        raise ValueError("expected two equal square 2-D velocity grids")
    n = u.shape[0]
    uh = np.fft.fft2(u) / (n * n)
    vh = np.fft.fft2(v) / (n * n)
    density = 0.5 * (np.abs(uh) ** 2 + np.abs(vh) ** 2)

    total = float(density.sum())
    physical = 0.5 * float(np.mean(u ** 2 + v ** 2))
    if physical > 0 and abs(total - physical) > 1e-10 * physical:
        raise AssertionError("spectral and physical energies disagree: "
                             f"{total} vs {physical}")
    if total == 0.0:
        raise ValueError("zero velocity field has no normalized spectrum")

    freq = np.fft.fftfreq(n, d=1.0 / n)
    kmag = np.hypot(*np.meshgrid(freq, freq, indexing="ij"))
    # every mode lands in some bin (corners reach |kappa| ~ 0.7 n), so the
    # normalized bins sum to exactly 1
    bins = np.rint(kmag).astype(np.int64)
    spectrum = np.bincount(bins.ravel(), weights=density.ravel())
    return np.arange(spectrum.shape[0]), spectrum / total

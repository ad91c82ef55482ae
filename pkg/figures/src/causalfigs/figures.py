"""Publication figures for causal-training runs.

Three figure builders, each taking file paths produced by the training
engine and returning a matplotlib Figure:

* training history: loss curves, residual profiles, weight profiles;
* heatmap: reference vs prediction vs error for a 1D space-time field,
  with point-in-time slice comparisons;
* spectrum: log-log energy-spectrum overlay of reference and prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import readers
from .readers import FormatError


@dataclass(frozen=True)
class FigureJob:
    """Where a figure's inputs live and where the rendering goes."""
    out_path: Path

    def save(self, fig) -> Path:
        self.out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(self.out_path, bbox_inches="tight")
        plt.close(fig)
        return self.out_path


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"{p}: no such file")
    return p


def plot_history(history_path, snapshots_path, max_profiles: int = 4):
    """Loss curves plus residual and weight profiles from snapshots.

    Profiles are drawn for up to ``max_profiles`` snapshot moments,
    spread evenly from first to last across all windows.
    """
    hist = readers.read_history(_require(history_path))
    snaps = readers.read_snapshots(_require(snapshots_path))
    if not snaps:
        raise FormatError(f"{snapshots_path}: no snapshot rows")

    fig, (ax_loss, ax_res, ax_w) = plt.subplots(
        1, 3, figsize=(13.5, 3.8))

    step = np.arange(1, hist["iteration"].size + 1)
    ax_loss.semilogy(step, hist["loss_res"], label="residual", lw=1.0)
    ax_loss.semilogy(step, hist["loss_ic"], label="initial", lw=1.0)
    bounds = np.flatnonzero(np.diff(hist["window"])) + 1
    for b in bounds:
        ax_loss.axvline(b, color="0.8", lw=0.6, zorder=0)
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(frameon=False, fontsize=8)
    ax_loss.set_title("training losses")

    keys = list(snaps)
    if len(keys) > max_profiles:
        picks = np.linspace(0, len(keys) - 1, max_profiles).round()
        keys = [keys[int(i)] for i in dict.fromkeys(picks)]
    cmap = plt.get_cmap("viridis")
    for j, key in enumerate(keys):
        window, iteration, eps = key
        slices, weights, residuals = snaps[key]
        color = cmap(j / max(len(keys) - 1, 1))
        label = f"w{window} it{iteration} " r"$\epsilon$" f"={eps:g}"
        ax_res.semilogy(slices, residuals, color=color, lw=1.0,
                        label=label)
        ax_w.plot(slices, weights, color=color, lw=1.0, label=label)
    ax_res.set_xlabel("time slice")
    ax_res.set_ylabel("slice residual loss")
    ax_res.set_title("residual profile")
    ax_w.set_xlabel("time slice")
    ax_w.set_ylabel("causal weight")
    ax_w.set_ylim(-0.05, 1.05)
    ax_w.set_title("weight profile")
    ax_w.legend(frameon=False, fontsize=7)

    fig.tight_layout()
    return fig


def plot_heatmap(reference_path, prediction_path, component: str,
                 times=()):
    """Reference, prediction and pointwise error maps for a 1D field,
    plus slice overlays at the requested times."""
    ref = readers.read_grid(_require(reference_path))
    pred = readers.read_grid(_require(prediction_path))
    if len(ref.axes) != 1 or len(pred.axes) != 1:
        raise FormatError("heatmaps need one-dimensional spatial grids")
    if ref.values.shape != pred.values.shape or not np.array_equal(
            ref.t, pred.t) or not np.array_equal(ref.axes[0],
                                                 pred.axes[0]):
        raise FormatError("reference and prediction grids do not match")
    u_ref = ref.component(component)
    u_pred = pred.component(component)
    err = np.abs(u_ref - u_pred)

    times = tuple(times)
    n_slices = len(times)
    fig, axes = plt.subplots(
        1, 3 + n_slices, figsize=(4.0 * (3 + n_slices), 3.4))
    x, t = ref.axes[0], ref.t
    vmin, vmax = u_ref.min(), u_ref.max()

    panels = [(u_ref, "reference", "viridis", vmin, vmax),
              (u_pred, "prediction", "viridis", vmin, vmax),
              (err, "absolute error", "magma", 0.0, err.max())]
    for ax, (field, title, cmap, lo, hi) in zip(axes, panels):
        im = ax.pcolormesh(t, x, field.T, cmap=cmap, vmin=lo, vmax=hi,
                           shading="nearest")
        ax.set_xlabel("t")
        ax.set_ylabel("x")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046)

    for ax, t_req in zip(axes[3:], times):
        j = int(np.argmin(np.abs(t - t_req)))
        ax.plot(x, u_ref[j], "k-", lw=1.2, label="reference")
        ax.plot(x, u_pred[j], "r--", lw=1.2, label="prediction")
        ax.set_xlabel("x")
        ax.set_ylabel(component)
        ax.set_title(f"t = {t[j]:g}")
        ax.legend(frameon=False, fontsize=8)

    fig.tight_layout()
    return fig


def plot_spectrum(reference_paths, prediction_paths):
    """Log-log overlay of reference and prediction energy spectra.

    Each argument is a sequence of spectrum files; pairs are drawn in
    order.  The k = 0 bin is dropped before plotting.
    """
    ref_paths = [_require(p) for p in reference_paths]
    pred_paths = [_require(p) for p in prediction_paths]
    if not ref_paths or len(ref_paths) != len(pred_paths):
        raise FormatError("need matching reference/prediction spectra")

    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    cmap = plt.get_cmap("viridis")
    plotted = 0
    for j, (rp, pp) in enumerate(zip(ref_paths, pred_paths)):
        k_r, e_r, t_r = readers.read_spectrum(rp)
        k_p, e_p, _ = readers.read_spectrum(pp)
        keep_r = (k_r > 0) & (e_r > 0)
        keep_p = (k_p > 0) & (e_p > 0)
        if not keep_r.any() or not keep_p.any():
            continue
        color = cmap(j / max(len(ref_paths) - 1, 1))
        label = "" if t_r is None else f"t = {t_r:g}"
        ax.loglog(k_r[keep_r], e_r[keep_r], "-", color=color, lw=1.2,
                  label=(label + " reference").strip())
        ax.loglog(k_p[keep_p], e_p[keep_p], "--", color=color, lw=1.2,
                  label=(label + " prediction").strip())
        plotted += 1
    if plotted == 0:
        raise FormatError("no positive-wavenumber energy to plot")
    ax.set_xlabel("wavenumber")
    ax.set_ylabel("energy fraction")
    ax.legend(frameon=False, fontsize=8)
    ax.set_title("energy spectrum")
    fig.tight_layout()
    return fig

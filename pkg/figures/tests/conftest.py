"""Hand-rolled writers for the on-disk formats under test.

These deliberately do not import the training engine; they re-create
the byte layout from scratch so the readers are checked against the
format itself rather than against a shared implementation.
"""

import json
import struct
import zlib

import numpy as np
import pytest


def pack_grid(t, axes, values, components, meta=None) -> bytes:
    records, payloads = [], []

    def add(name, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        records.append({"name": name, "dtype": "<f8",
                        "shape": list(arr.shape)})
        payloads.append(arr.tobytes())

    add("t", t)
    for i, axis in enumerate(axes):
        add(f"axis{i}", axis)
    add("values", values)
    header = {"kind": "grid", "components": list(components),
              "n_axes": len(axes), "meta": dict(meta or {}),
              "tensors": records}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join([b"CPNGRID\x00",
                     struct.pack("<II", 1, 0x01020304),
                     struct.pack("<Q", len(blob)), blob, *payloads])
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def write_grid(path, t, axes, values, components, meta=None):
    path.write_bytes(pack_grid(t, axes, values, components, meta))
    return path


def write_history(path, rows):
    """rows: (window, iteration, epsilon, loss_ic, loss_res, min_weight,
    learning_rate, wall_ms)."""
    lines = ["# causalpinn-history v1",
             "window,iteration,epsilon,loss_ic,loss_res,min_weight,"
             "learning_rate,wall_ms"]
    for row in rows:
        lines.append(f"{int(row[0])},{int(row[1])}," +
                     ",".join(f"{float(v):.17g}" for v in row[2:]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_snapshots(path, groups):
    """groups: (window, iteration, epsilon, weights, residuals)."""
    lines = ["# causalpinn-snapshots v1",
             "window,iteration,epsilon,slice,weight,residual"]
    for window, iteration, eps, weights, residuals in groups:
        for i, (w, r) in enumerate(zip(weights, residuals)):
            lines.append(f"{int(window)},{int(iteration)},"
                         f"{float(eps):.17g},{i},{float(w):.17g},"
                         f"{float(r):.17g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_spectrum(path, k, e, t=None):
    lines = ["# causalpinn-spectrum v1"]
    if t is not None:
        lines.append(f"# t = {float(t):.17g}")
    lines.append("k,E")
    lines += [f"{int(ki)},{float(ei):.17g}" for ki, ei in zip(k, e)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_per_time(path, t, cols):
    names = list(cols)
    lines = ["# causalpinn-errors-per-time v1", "t," + ",".join(names)]
    for j, tj in enumerate(t):
        vals = [f"{float(tj):.17g}"]
        vals += [f"{float(cols[n][j]):.17g}" for n in names]
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def grid_pair(tmp_path):
    """Matching 1D reference/prediction grid files with component u."""
    rng = np.random.default_rng(7)
    t = np.linspace(0.0, 1.0, 6)
    x = np.linspace(-1.0, 1.0, 9)
    ref = rng.normal(size=(6, 9, 1))
    pred = ref + 0.01 * rng.normal(size=ref.shape)
    ref_p = write_grid(tmp_path / "ref.grid", t, (x,), ref, ("u",))
    pred_p = write_grid(tmp_path / "pred.grid", t, (x,), pred, ("u",))
    return ref_p, pred_p, t, x, ref, pred

"""Self-contained readers for the versioned causalpinn output formats.

This package renders files only; it deliberately re-implements the format
parsing instead of importing the engine, so the file layout is the sole
contract between the two.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GRID_MAGIC = b"CPNGRID\x00"
FORMAT_VERSION = 1
ENDIAN_MARK = 0x01020304

HISTORY_SCHEMA = "# causalpinn-history v1"
SNAPSHOT_SCHEMA = "# causalpinn-snapshots v1"
ERROR_SCHEMA = "# causalpinn-errors v1"
PER_TIME_SCHEMA = "# causalpinn-errors-per-time v1"
SPECTRUM_SCHEMA = "# causalpinn-spectrum v1"
NTK_SCHEMA = "# causalpinn-ntk v1"


class FormatError(RuntimeError):
    """File does not parse as the expected versioned format."""


@dataclass(frozen=True)
class Grid:
    t: np.ndarray
    axes: tuple[np.ndarray, ...]
    values: np.ndarray            # (n_t, *axis shapes, n_components)
    components: tuple[str, ...]
    meta: dict

    def component(self, name: str) -> np.ndarray:
        try:
            return self.values[..., self.components.index(name)]
        except ValueError:
            raise KeyError(f"grid has no component {name!r}") from None


def read_grid(path) -> Grid:
    raw = Path(path).read_bytes()
    base = len(GRID_MAGIC) + 8 + 8
    if len(raw) < base + 4:
        raise FormatError(f"{path}: truncated file")
    if raw[:len(GRID_MAGIC)] != GRID_MAGIC:
        raise FormatError(f"{path}: wrong magic tag")
    version, endian = struct.unpack_from("<II", raw, len(GRID_MAGIC))
    if endian != ENDIAN_MARK:
        raise FormatError(f"{path}: byte order mismatch")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    (stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if stored != (zlib.crc32(raw[:-4]) & 0xFFFFFFFF):
        raise FormatError(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack_from("<Q", raw, len(GRID_MAGIC) + 8)
    header = json.loads(raw[base:base + hlen].decode("utf-8"))
    if header.get("kind") != "grid":
        raise FormatError(f"{path}: not a grid file")

    data = raw[base + hlen:-4]
    tensors = {}
    offset = 0
    for rec in header["tensors"]:
        if rec["dtype"] != "<f8":
            raise FormatError(f"{path}: unsupported element type")
        shape = tuple(int(s) for s in rec["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
        tensors[rec["name"]] = arr.reshape(shape).copy()
        offset += 8 * n
    axes = tuple(tensors[f"axis{i}"] for i in range(header["n_axes"]))
    return Grid(tensors["t"], axes, tensors["values"],
                tuple(header["components"]), header.get("meta", {}))


def _read_csv(path, schema):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != schema:
        raise FormatError(f"{path}: expected schema line {schema!r}")
    body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    if not body:
        raise FormatError(f"{path}: missing header row")
    return body[0].split(","), [ln.split(",") for ln in body[1:]]


def read_history(path) -> dict[str, np.ndarray]:
    """Columns of the training history as arrays keyed by name."""
    header, rows = _read_csv(path, HISTORY_SCHEMA)
    cols = {name: np.array([float(r[j]) for r in rows])
            for j, name in enumerate(header)}
    cols["window"] = cols["window"].astype(np.int64)
    cols["iteration"] = cols["iteration"].astype(np.int64)
    return cols


def read_snapshots(path):
    """Weight/residual profiles grouped by (window, iteration, epsilon),
    in file order; each value is (slices, weights, residuals)."""
    header, rows = _read_csv(path, SNAPSHOT_SCHEMA)
    expect = ["window", "iteration", "epsilon", "slice", "weight",
              "residual"]
    if header != expect:
        raise FormatError(f"{path}: header {header} != {expect}")
    groups: dict[tuple, list] = {}
    for r in rows:
        key = (int(r[0]), int(r[1]), float(r[2]))
        groups.setdefault(key, []).append((int(r[3]), float(r[4]),
                                           float(r[5])))
    out = {}
    for key, triples in groups.items():
        triples.sort()
        out[key] = (np.array([s for s, _, _ in triples]),
                    np.array([w for _, w, _ in triples]),
                    np.array([v for _, _, v in triples]))
    return out


def read_spectrum(path):
    """(k, E, t-or-None) from one spectrum file."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != SPECTRUM_SCHEMA:
        raise FormatError(f"{path}: expected schema line "
                          f"{SPECTRUM_SCHEMA!r}")
    t = None
    for ln in lines[1:]:
        if ln.startswith("# t = "):
            t = float(ln[len("# t = "):])
    body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    if not body or body[0].split(",") != ["k", "E"]:
        raise FormatError(f"{path}: unexpected spectrum header")
    k = np.array([int(r.split(",")[0]) for r in body[1:]])
    E = np.array([float(r.split(",")[1]) for r in body[1:]])
    return k, E, t


def read_per_time_errors(path):
    header, rows = _read_csv(path, PER_TIME_SCHEMA)
    if not header or header[0] != "t":
        raise FormatError(f"{path}: unexpected header {header}")
    t = np.array([float(r[0]) for r in rows])
    cols = {name: np.array([float(r[j + 1]) for r in rows])
            for j, name in enumerate(header[1:])}
    return t, cols

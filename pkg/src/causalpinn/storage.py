"""Versioned on-disk formats: binary checkpoints, binary solution grids,
and the CSV schemas for histories, snapshots, errors, spectra, and
convergence-rate profiles.

All binary payloads are little-endian with a trailing CRC32; all CSV
floats carry 17 significant digits so doubles round-trip exactly.  Every
file starts with an explicit format tag so readers can refuse anything
they do not understand.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import GridSolution
from .models import ArchitectureSpec
from .tape import ParameterSet
from .training import HistoryRow

CHECKPOINT_MAGIC = b"CPNCKPT\x00"
GRID_MAGIC = b"CPNGRID\x00"
FORMAT_VERSION = 1
ENDIAN_MARK = 0x01020304

_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


class StorageError(RuntimeError):
    """Unreadable or unacceptable file: wrong magic, version, byte order,
    or checksum."""


def _fmt(x) -> str:
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# binary container plumbing shared by checkpoints and grids

def _pack_container(magic: bytes, header: dict,
                    payloads: list[bytes]) -> bytes:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<II", FORMAT_VERSION, ENDIAN_MARK),
             struct.pack("<Q", len(blob)), blob, *payloads]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _unpack_container(raw: bytes, magic: bytes, path) -> tuple[dict, bytes]:
    base = len(magic) + 8 + 8
    if len(raw) < base + 4:
        raise StorageError(f"{path}: truncated file")
    if raw[:len(magic)] != magic:
        raise StorageError(f"{path}: wrong magic tag")
    version, endian = struct.unpack_from("<II", raw, len(magic))
    if endian != ENDIAN_MARK:
        raise StorageError(f"{path}: byte order mismatch "
                           f"(marker {endian:#010x})")
    if version != FORMAT_VERSION:
        raise StorageError(f"{path}: format version {version} is not "
                           f"supported (expected {FORMAT_VERSION})")
    (stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    actual = zlib.crc32(raw[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise StorageError(f"{path}: checksum mismatch (file is corrupt "
                           "or truncated)")
    (hlen,) = struct.unpack_from("<Q", raw, len(magic) + 8)
    if base + hlen + 4 > len(raw):
        raise StorageError(f"{path}: truncated header")
    header = json.loads(raw[base:base + hlen].decode("utf-8"))
    return header, raw[base + hlen:-4]


def _read_tensors(records: list[dict], data: bytes, path) -> dict:
    out = {}
    offset = 0
    for rec in records:
        if rec["dtype"] not in _DTYPES:
            raise StorageError(f"{path}: unsupported element type "
                               f"{rec['dtype']!r}")
        dt = _DTYPES[rec["dtype"]]
        shape = tuple(int(s) for s in rec["shape"])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise StorageError(f"{path}: tensor data runs past the end")
        arr = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize,
                            offset=offset).reshape(shape)
        out[rec["name"]] = arr.astype(np.float64, copy=True) \
            if dt != np.float64 else arr.copy()
        offset += nbytes
    if offset != len(data):
        raise StorageError(f"{path}: {len(data) - offset} trailing data "
                           "bytes")
    return out


# ---------------------------------------------------------------------------
# checkpoints

@dataclass(frozen=True)
class Checkpoint:
    arch: ArchitectureSpec
    window_index: int
    window: tuple[float, float]
    tensors: dict[str, np.ndarray]
    meta: dict

    def params(self) -> ParameterSet:
        return ParameterSet({name[len("param."):]: arr
                             for name, arr in self.tensors.items()
                             if name.startswith("param.")})

    def ic_data(self) -> dict:
        return {name[len("ic."):]: arr
                for name, arr in self.tensors.items()
                if name.startswith("ic.")}


def save_checkpoint(path, arch: ArchitectureSpec,
                    window_index: int, window: tuple[float, float],
                    params: ParameterSet, ic_data: dict | None = None,
                    meta: dict | None = None) -> None:
    tensors: list[tuple[str, np.ndarray]] = []
    for name, arr in params.items():
        tensors.append((f"param.{name}", arr))
    for key, arr in sorted((ic_data or {}).items()):
        tensors.append((f"ic.{key}", np.asarray(arr, dtype=np.float64)))

    records, payloads = [], []
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        records.append({"name": name, "dtype": "<f8",
                        "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = {"kind": "checkpoint", "arch": arch.to_dict(),
              "window_index": int(window_index),
              "window": [float(window[0]), float(window[1])],
              "meta": dict(meta or {}), "tensors": records}
    Path(path).write_bytes(_pack_container(CHECKPOINT_MAGIC, header,
                                           payloads))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    header, data = _unpack_container(raw, CHECKPOINT_MAGIC, path)
    if header.get("kind") != "checkpoint":
        raise StorageError(f"{path}: not a checkpoint file")
    tensors = _read_tensors(header["tensors"], data, path)
    return Checkpoint(arch=ArchitectureSpec.from_dict(header["arch"]),
                      window_index=int(header["window_index"]),
                      window=(header["window"][0], header["window"][1]),
                      tensors=tensors, meta=header["meta"])


# ---------------------------------------------------------------------------
# solution grids

def save_grid(path, sol: GridSolution, meta: dict | None = None) -> None:
    records, payloads = [], []

    def add(name, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        records.append({"name": name, "dtype": "<f8",
                        "shape": list(arr.shape)})
        payloads.append(arr.tobytes())

    add("t", sol.t)
    for i, axis in enumerate(sol.axes):
        add(f"axis{i}", axis)
    add("values", sol.values)
    header = {"kind": "grid", "components": list(sol.components),
              "n_axes": len(sol.axes), "meta": dict(meta or {}),
              "tensors": records}
    Path(path).write_bytes(_pack_container(GRID_MAGIC, header, payloads))


def load_grid(path) -> GridSolution:
    raw = Path(path).read_bytes()
    header, data = _unpack_container(raw, GRID_MAGIC, path)
    if header.get("kind") != "grid":
        raise StorageError(f"{path}: not a grid file")
    tensors = _read_tensors(header["tensors"], data, path)
    axes = tuple(tensors[f"axis{i}"] for i in range(header["n_axes"]))
    return GridSolution(tensors["t"], axes, tensors["values"],
                        tuple(header["components"]))


def load_grid_meta(path) -> dict:
    raw = Path(path).read_bytes()
    header, _ = _unpack_container(raw, GRID_MAGIC, path)
    return header["meta"]


# ---------------------------------------------------------------------------
# CSV schemas (first line is the schema tag, then the fixed header row)

HISTORY_SCHEMA = "# causalpinn-history v1"
SNAPSHOT_SCHEMA = "# causalpinn-snapshots v1"
ERROR_SCHEMA = "# causalpinn-errors v1"
PER_TIME_SCHEMA = "# causalpinn-errors-per-time v1"
SPECTRUM_SCHEMA = "# causalpinn-spectrum v1"
NTK_SCHEMA = "# causalpinn-ntk v1"


def _write_lines(path, lines):
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_csv(path, schema) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != schema:
        raise StorageError(f"{path}: expected schema line {schema!r}")
    body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    if not body:
        raise StorageError(f"{path}: missing header row")
    header = body[0].split(",")
    return header, [ln.split(",") for ln in body[1:]]


def write_history_csv(path, rows: list[tuple[int, HistoryRow]]) -> None:
    """rows: (window index, history row) in emission order."""
    lines = [HISTORY_SCHEMA, "window," + ",".join(HistoryRow.FIELDS)]
    for window, row in rows:
        vals = [str(int(window)), str(int(row.iteration))]
        vals += [_fmt(getattr(row, f)) for f in HistoryRow.FIELDS[1:]]
        lines.append(",".join(vals))
    _write_lines(path, lines)


def read_history_csv(path) -> list[dict]:
    header, body = _read_csv(path, HISTORY_SCHEMA)
    expected = ["window"] + list(HistoryRow.FIELDS)
    if header != expected:
        raise StorageError(f"{path}: header {header} != {expected}")
    out = []
    for row in body:
        rec = {"window": int(row[0]), "iteration": int(row[1])}
        for name, val in zip(HistoryRow.FIELDS[1:], row[2:]):
            rec[name] = float(val)
        out.append(rec)
    return out


def write_snapshots_csv(path, snaps) -> None:
    """snaps: (window, iteration, epsilon, weights, residuals) tuples;
    written in long form, one row per temporal slice."""
    lines = [SNAPSHOT_SCHEMA,
             "window,iteration,epsilon,slice,weight,residual"]
    for window, iteration, epsilon, weights, residuals in snaps:
        for i, (w, r) in enumerate(zip(weights, residuals)):
            lines.append(f"{int(window)},{int(iteration)},{_fmt(epsilon)},"
                         f"{i},{_fmt(w)},{_fmt(r)}")
    _write_lines(path, lines)


def read_snapshots_csv(path) -> list[dict]:
    header, body = _read_csv(path, SNAPSHOT_SCHEMA)
    expected = ["window", "iteration", "epsilon", "slice", "weight",
                "residual"]
    if header != expected:
        raise StorageError(f"{path}: header {header} != {expected}")
    return [{"window": int(r[0]), "iteration": int(r[1]),
             "epsilon": float(r[2]), "slice": int(r[3]),
             "weight": float(r[4]), "residual": float(r[5])}
            for r in body]


def write_errors_csv(path, pairs: list[tuple[str, float]]) -> None:
    lines = [ERROR_SCHEMA, "component,relative_l2"]
    lines += [f"{name},{_fmt(val)}" for name, val in pairs]
    _write_lines(path, lines)


def read_errors_csv(path) -> list[tuple[str, float]]:
    header, body = _read_csv(path, ERROR_SCHEMA)
    if header != ["component", "relative_l2"]:
        raise StorageError(f"{path}: unexpected header {header}")
    return [(r[0], float(r[1])) for r in body]


def write_per_time_errors_csv(path, t: np.ndarray,
                              columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    lines = [PER_TIME_SCHEMA, ",".join(["t"] + names)]
    for i, tv in enumerate(t):
        lines.append(",".join([_fmt(tv)] + [_fmt(columns[n][i])
                                            for n in names]))
    _write_lines(path, lines)


def read_per_time_errors_csv(path):
    header, body = _read_csv(path, PER_TIME_SCHEMA)
    if not header or header[0] != "t":
        raise StorageError(f"{path}: unexpected header {header}")
    t = np.array([float(r[0]) for r in body])
    cols = {name: np.array([float(r[j + 1]) for r in body])
            for j, name in enumerate(header[1:])}
    return t, cols


def write_spectrum_csv(path, k: np.ndarray, E: np.ndarray,
                       t: float | None = None) -> None:
    lines = [SPECTRUM_SCHEMA]
    if t is not None:
        lines.append(f"# t = {_fmt(t)}")
    lines.append("k,E")
    lines += [f"{int(ki)},{_fmt(Ei)}" for ki, Ei in zip(k, E)]
    _write_lines(path, lines)


def read_spectrum_csv(path):
    header, body = _read_csv(path, SPECTRUM_SCHEMA)
    if header != ["k", "E"]:
        raise StorageError(f"{path}: unexpected header {header}")
    k = np.array([int(r[0]) for r in body])
    E = np.array([float(r[1]) for r in body])
    return k, E


def write_ntk_csv(path, times: np.ndarray, rates: np.ndarray) -> None:
    lines = [NTK_SCHEMA, "t,rate"]
    lines += [f"{_fmt(tv)},{_fmt(rv)}" for tv, rv in zip(times, rates)]
    _write_lines(path, lines)


def read_ntk_csv(path):
    header, body = _read_csv(path, NTK_SCHEMA)
    if header != ["t", "rate"]:
        raise StorageError(f"{path}: unexpected header {header}")
    return (np.array([float(r[0]) for r in body]),
            np.array([float(r[1]) for r in body]))

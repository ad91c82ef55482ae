"""Network architectures, periodic Fourier embeddings, and initialization.

Forward passes run on a Tape over batched jet inputs of shape
(n_slots, batch, features).  Embeddings are built off-tape as constant jet
arrays: they depend only on coordinates, never on parameters, so they need no
adjoints and can be cached for a fixed mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .jets import JetSpace, get_space
from .tape import ParameterSet, Tape


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str                      # "mlp" | "modified_mlp"
    depth: int                     # number of hidden layers
    width: int
    in_dim: int                    # network input width, post-embedding
    out_dim: int
    activation: str = "tanh"
    embedding: tuple | None = None # ("fourier_1d", m, period) or
                                   # ("fourier_2d", m, n, period_x, period_y)
    time_concat: bool = True

    def __post_init__(self):
        if self.kind not in ("mlp", "modified_mlp"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh activation is supported")
        if self.embedding is not None:
            expected = self.embedded_width + (1 if self.time_concat else 0)
            if self.in_dim != expected:
                raise ValueError(
                    f"in_dim {self.in_dim} inconsistent with embedding "
                    f"(expected {expected})")

    @property
    def embedded_width(self) -> int:
        if self.embedding is None:
            return 0
        if self.embedding[0] == "fourier_1d":
            return 2 * self.embedding[1] + 1
        if self.embedding[0] == "fourier_2d":
            return 4 * self.embedding[1] * self.embedding[2]
        raise ValueError(f"unknown embedding {self.embedding[0]!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "depth": self.depth, "width": self.width,
                "in_dim": self.in_dim, "out_dim": self.out_dim,
                "activation": self.activation,
                "embedding": list(self.embedding) if self.embedding else None,
                "time_concat": self.time_concat}

    @staticmethod
    def from_dict(d: dict) -> "ArchitectureSpec":
        emb = tuple(d["embedding"]) if d.get("embedding") else None
        return ArchitectureSpec(
            kind=d["kind"], depth=d["depth"], width=d["width"],
            in_dim=d["in_dim"], out_dim=d["out_dim"],
            activation=d.get("activation", "tanh"), embedding=emb,
            time_concat=d.get("time_concat", True))


def layer_dims(spec: ArchitectureSpec) -> list[tuple[str, int, int]]:
    dims = [("layer0", spec.in_dim, spec.width)]
    for l in range(1, spec.depth):
        dims.append((f"layer{l}", spec.width, spec.width))
    dims.append(("out", spec.width, spec.out_dim))
    return dims


def init_params(spec: ArchitectureSpec, seed: int) -> ParameterSet:
    """Glorot normal weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    entries: dict[str, np.ndarray] = {}

    def glorot(name, fi, fo):
        std = math.sqrt(2.0 / (fi + fo))
        entries[f"{name}.W"] = rng.normal(0.0, std, size=(fi, fo))
        entries[f"{name}.b"] = np.zeros(fo)

    if spec.kind == "modified_mlp":
        glorot("enc1", spec.in_dim, spec.width)
        glorot("enc2", spec.in_dim, spec.width)
    for name, fi, fo in layer_dims(spec):
        glorot(name, fi, fo)
    return ParameterSet(entries)


# ---------------------------------------------------------------------------
# forward passes (tape-recorded)

def mlp_forward(tape: Tape, spec: ArchitectureSpec, x: int) -> int:
    h = x
    for l in range(spec.depth):
        h = tape.jet_tanh(tape.affine(h, f"layer{l}.W", f"layer{l}.b"))
    return tape.affine(h, "out.W", "out.b")


def modified_mlp_forward(tape: Tape, spec: ArchitectureSpec, x: int) -> int:
    u = tape.jet_tanh(tape.affine(x, "enc1.W", "enc1.b"))
    v = tape.jet_tanh(tape.affine(x, "enc2.W", "enc2.b"))
    h = tape.jet_tanh(tape.affine(x, "layer0.W", "layer0.b"))
    for l in range(1, spec.depth):
        z = tape.jet_tanh(tape.affine(h, f"layer{l}.W", f"layer{l}.b"))
        h = tape.lerp(z, u, v)
    return tape.affine(h, "out.W", "out.b")


def network_forward(tape: Tape, spec: ArchitectureSpec, x: int) -> int:
    if spec.kind == "mlp":
        return mlp_forward(tape, spec, x)
    return modified_mlp_forward(tape, spec, x)


# ---------------------------------------------------------------------------
# input jet construction (off-tape constants)
#
# Variable order inside a jet: time is always variable 0; spatial coordinates
# follow.  Jets are seeded in physical units so extracted derivatives are
# physical; the network's *time feature* is affinely rescaled to [0,1] over
# the window, which shows up only in that feature's derivative slot.

def time_feature(space: JetSpace, t: np.ndarray, t0: float,
                 t1: float) -> np.ndarray:
    B = t.shape[0]
    out = np.zeros((space.n_slots, B))
    out[0] = (t - t0) / (t1 - t0)
    unit = (1,) + (0,) * (space.num_vars - 1)
    if space.has(unit):
        out[space.slot(unit)] = 1.0 / (t1 - t0)
    return out


def _trig_cycle(kind: str, arg: np.ndarray, omega: float,
                degree: int) -> list[np.ndarray]:
    """Taylor coefficients (derivative/q!) of cos or sin of (omega*x) in x,
    orders 0..degree."""
    s, c = np.sin(arg), np.cos(arg)
    if kind == "cos":
        cycle = [c, -s, -c, s]
    else:
        cycle = [s, c, -s, -c]
    return [cycle[q % 4] * omega ** q / math.factorial(q)
            for q in range(degree + 1)]


def fourier_1d_features(space: JetSpace, x: np.ndarray, m: int,
                        period: float) -> np.ndarray:
    """(1, cos wx, sin wx, ..., cos m_wx, sin m_wx) as jets in variable 1."""
    if space.num_vars < 2:
        raise ValueError("1-D Fourier features need a spatial variable")
    B = x.shape[0]
    omega = 2.0 * math.pi / period
    feats = np.zeros((space.n_slots, B, 2 * m + 1))
    feats[0, :, 0] = 1.0
    deg = space.degree
    for k in range(1, m + 1):
        arg = k * omega * x
        ccoef = _trig_cycle("cos", arg, k * omega, deg)
        scoef = _trig_cycle("sin", arg, k * omega, deg)
        for q in range(deg + 1):
            alpha = [0] * space.num_vars
            alpha[1] = q
            if not space.has(tuple(alpha)):
                continue
            slot = space.slot(tuple(alpha))
            feats[slot, :, 2 * k - 1] = ccoef[q]
            feats[slot, :, 2 * k] = scoef[q]
    return feats


def fourier_2d_features(space: JetSpace, x: np.ndarray, y: np.ndarray,
                        m: int, n: int, period_x: float,
                        period_y: float) -> np.ndarray:
    """All products {cos,sin}(i wx x)*{cos,sin}(j wy y), i<=n, j<=m, laid out
    in four blocks (cc, cs, sc, ss) of size n*m each."""
    if space.num_vars != 3:
        raise ValueError("2-D Fourier features need (t, x, y) jets")
    B = x.shape[0]
    wx = 2.0 * math.pi / period_x
    wy = 2.0 * math.pi / period_y
    deg = space.degree
    cyc_x = {("cos", i): _trig_cycle("cos", i * wx * x, i * wx, deg)
             for i in range(1, n + 1)}
    cyc_x.update({("sin", i): _trig_cycle("sin", i * wx * x, i * wx, deg)
                  for i in range(1, n + 1)})
    cyc_y = {("cos", j): _trig_cycle("cos", j * wy * y, j * wy, deg)
             for j in range(1, m + 1)}
    cyc_y.update({("sin", j): _trig_cycle("sin", j * wy * y, j * wy, deg)
                  for j in range(1, m + 1)})
    feats = np.zeros((space.n_slots, B, 4 * m * n))
    col = 0
    for kx in ("cos", "sin"):
        for ky in ("cos", "sin"):
            for i in range(1, n + 1):
                for j in range(1, m + 1):
                    fx = cyc_x[(kx, i)]
                    fy = cyc_y[(ky, j)]
                    # product jet: c_{(0,q,r)} = fx[q] * fy[r]
                    for q in range(deg + 1):
                        for r in range(deg + 1 - q):
                            if not space.has((0, q, r)):
                                continue
                            slot = space.slot((0, q, r))
                            feats[slot, :, col] = fx[q] * fy[r]
                    col += 1
    return feats


def build_input_jets(spec: ArchitectureSpec, space: JetSpace,
                     t: np.ndarray, window: tuple[float, float],
                     x: np.ndarray | None = None,
                     y: np.ndarray | None = None) -> np.ndarray:
    """Assemble the (n_slots, batch, in_dim) constant input for the network."""
    cols = []
    if spec.time_concat:
        cols.append(time_feature(space, t, window[0], window[1])[:, :, None])
    if spec.embedding is None:
        if x is not None:
            xj = np.zeros((space.n_slots, x.shape[0]))
            xj[0] = x
            alpha = [0] * space.num_vars
            alpha[1] = 1
            if space.has(tuple(alpha)):
                xj[space.slot(tuple(alpha))] = 1.0
            cols.append(xj[:, :, None])
    elif spec.embedding[0] == "fourier_1d":
        _, m, period = spec.embedding
        cols.append(fourier_1d_features(space, x, m, period))
    else:
        _, m, n, px, py = spec.embedding
        cols.append(fourier_2d_features(space, x, y, m, n, px, py))
    out = np.ascontiguousarray(np.concatenate(cols, axis=2))
    if out.shape[2] != spec.in_dim:
        raise ValueError(f"built {out.shape[2]} input features, spec wants "
                         f"{spec.in_dim}")
    return out


def hard_ic_lorenz(tape: Tape, raw: int, t_phys: np.ndarray,
                   t0: float, ic: np.ndarray) -> int:
    """State = raw * (t - t0) + ic, exact at the window start.

    t_phys is the physical time batch; the multiplying jet is the local time
    tau = t - t0 seeded on the time variable so extracted time derivatives
    stay physical.
    """
    space = tape.space
    B = t_phys.shape[0]
    n_out = tape.nodes[raw].primal.shape[2]
    tau = np.zeros((space.n_slots, B, n_out))
    tau[0] = (t_phys - t0)[:, None]
    unit = (1,) + (0,) * (space.num_vars - 1)
    if space.has(unit):
        tau[space.slot(unit)] = 1.0
    tau_node = tape.const(np.ascontiguousarray(tau), jet=True)
    return tape.add_const(tape.jet_mul(raw, tau_node), np.asarray(ic))

"""Reverse-mode differentiation over jet-valued nodes.

The tape records a define-by-run graph whose primals are batched jet
coefficient arrays (slot axis first) or plain arrays (post-extraction).  One
reverse sweep yields parameter gradients regardless of the jet degree used on
the forward pass.  Adjoints are coefficient-shaped and accumulated in fixed
node order, so a run is bit-reproducible.

Gradients flow only into ParameterSet entries referenced by affine/param
nodes; inputs (collocation jets) are constants.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .jets import (JetSpace, cos_series, exp_series, jet_compose_arrays,
                   recip_series, sin_series)


class ParameterSet:
    """Ordered, named tensors with flatten/unflatten round trip."""

    def __init__(self, entries: dict[str, np.ndarray]):
        self.entries: dict[str, np.ndarray] = {}
        for name, arr in entries.items():
            if name in self.entries:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.entries[name] = np.asarray(arr, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __setitem__(self, name: str, value: np.ndarray):
        if name in self.entries and self.entries[name].shape != value.shape:
            raise ValueError(f"shape of {name!r} is immutable")
        self.entries[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name):
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def items(self):
        return self.entries.items()

    @property
    def total_dim(self) -> int:
        return sum(v.size for v in self.entries.values())

    def flatten(self) -> np.ndarray:
        if not self.entries:
            return np.empty(0)
        return np.concatenate([v.ravel() for v in self.entries.values()])

    def unflatten(self, vec: np.ndarray) -> "ParameterSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.total_dim:
            raise ValueError(f"expected {self.total_dim} values, "
                             f"got {vec.size}")
        out, pos = {}, 0
        for name, v in self.entries.items():
            out[name] = vec[pos:pos + v.size].reshape(v.shape).copy()
            pos += v.size
        return ParameterSet(out)

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.entries.items()})

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet({k: np.zeros_like(v)
                             for k, v in self.entries.items()})


class BufferPool:
    """Shape-keyed free lists so per-iteration tapes reuse large buffers."""

    def __init__(self):
        self._free: dict[tuple, list[np.ndarray]] = {}

    def take(self, shape) -> np.ndarray:
        lst = self._free.get(tuple(shape))
        if lst:
            return lst.pop()
        return np.empty(shape, dtype=np.float64)

    def give(self, arr: np.ndarray):
        self._free.setdefault(arr.shape, []).append(arr)


class Node:
    __slots__ = ("op", "inputs", "primal", "aux", "adjoint", "needs_grad",
                 "jet")

    def __init__(self, op, inputs, primal, aux=None, needs_grad=False,
                 jet=False):
        self.op = op
        self.inputs = inputs
        self.primal = primal
        self.aux = aux
        self.adjoint = None
        self.needs_grad = needs_grad
        self.jet = jet


class Tape:
    """One forward/backward pass; build a fresh tape per iteration."""

    def __init__(self, params: ParameterSet, space: JetSpace | None = None,
                 pool: BufferPool | None = None):
        self.params = params
        self.space = space
        self.pool = pool or BufferPool()
        self.nodes: list[Node] = []
        self._owned: list[np.ndarray] = []
        self._param_use: dict[str, int] = {}

    # -- plumbing ----------------------------------------------------------
    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _alloc(self, shape) -> np.ndarray:
        arr = self.pool.take(shape)
        self._owned.append(arr)
        return arr

    def _alloc_zeros(self, shape) -> np.ndarray:
        arr = self._alloc(shape)
        arr.fill(0.0)
        return arr

    def release(self):
        """Return every pooled buffer; the tape is dead afterwards."""
        for arr in self._owned:
            self.pool.give(arr)
        self._owned.clear()
        self.nodes.clear()

    def primal(self, nid: int) -> np.ndarray:
        return self.nodes[nid].primal

    def _ng(self, *nids) -> bool:
        return any(self.nodes[n].needs_grad for n in nids)

    def _flat2(self, arr):
        return arr.reshape(arr.shape[0], -1)

    # -- leaves ------------------------------------------------------------
    def const(self, value, jet=False) -> int:
        return self._push(Node("const", (), np.asarray(value, np.float64),
                               jet=jet))

    def param_vec(self, name: str) -> int:
        """The raw parameter tensor as a plain node (used by tests and
        scalar-model paths)."""
        return self._push(Node("param_vec", (), self.params[name], aux=name,
                               needs_grad=True))

    # -- jet ops -----------------------------------------------------------
    def affine(self, x: int, w_name: str, b_name: str | None) -> int:
        """Slot-wise x @ W plus bias on the constant slot."""
        xp = self.nodes[x].primal
        W = self.params[w_name]
        S, B, Fi = xp.shape
        Fo = W.shape[1]
        z = self._alloc((S, B, Fo))
        np.matmul(xp.reshape(S * B, Fi), W, out=z.reshape(S * B, Fo))
        if b_name is not None:
            z[0] += self.params[b_name]
        for n in (w_name, b_name):
            if n is not None:
                self._param_use[n] = self._param_use.get(n, 0) + 1
        return self._push(Node("affine", (x,), z, aux=(w_name, b_name),
                               needs_grad=True, jet=True))

    def jet_mul(self, a: int, b: int) -> int:
        ap, bp = self.nodes[a].primal, self.nodes[b].primal
        if ap.shape != bp.shape:
            raise ValueError(f"jet_mul shape mismatch {ap.shape} vs "
                             f"{bp.shape}; materialize broadcasts first")
        out = self._alloc(ap.shape)
        K.mul_fwd(self._flat2(ap), self._flat2(bp), self._flat2(out),
                  self.space.mul_table)
        return self._push(Node("jet_mul", (a, b), out,
                               needs_grad=self._ng(a, b), jet=True))

    def jet_tanh(self, x: int) -> int:
        xp = self.nodes[x].primal
        y = self._alloc(xp.shape)
        t0 = np.tanh(xp[0]).ravel()
        K.tanh_fwd(t0, self._flat2(xp), self._flat2(y),
                   self.space.mul_table_nc, self.space.n_slots,
                   self.space.degree)
        return self._push(Node("jet_tanh", (x,), y, needs_grad=self._ng(x),
                               jet=True))

    def _jet_elementary(self, x: int, op: str) -> int:
        xp = self.nodes[x].primal
        sp = self.space
        c0 = xp[0]
        if op == "jet_exp":
            y = jet_compose_arrays(sp, exp_series(c0, sp.degree), xp)
            aux = None  # the backward factor is y itself
        elif op == "jet_sin":
            y = jet_compose_arrays(sp, sin_series(c0, sp.degree), xp)
            aux = jet_compose_arrays(sp, cos_series(c0, sp.degree), xp)
        elif op == "jet_cos":
            y = jet_compose_arrays(sp, cos_series(c0, sp.degree), xp)
            aux = -jet_compose_arrays(sp, sin_series(c0, sp.degree), xp)
        elif op == "jet_recip":
            if np.any(c0 == 0.0):
                raise ZeroDivisionError("jet reciprocal of zero constant")
            y = jet_compose_arrays(sp, recip_series(c0, sp.degree), xp)
            aux = None  # backward factor -y*y built on the fly
        else:  # pragma: no cover
            raise ValueError(op)
        return self._push(Node(op, (x,), y, aux=aux,
                               needs_grad=self._ng(x), jet=True))

    def jet_exp(self, x: int) -> int:
        return self._jet_elementary(x, "jet_exp")

    def jet_sin(self, x: int) -> int:
        return self._jet_elementary(x, "jet_sin")

    def jet_cos(self, x: int) -> int:
        return self._jet_elementary(x, "jet_cos")

    def jet_recip(self, x: int) -> int:
        return self._jet_elementary(x, "jet_recip")

    def lerp(self, t: int, u: int, v: int) -> int:
        """u + t*(v-u): the gate mix of the modified MLP."""
        tp, up, vp = (self.nodes[n].primal for n in (t, u, v))
        out = self._alloc(up.shape)
        K.lerp_fwd(self._flat2(tp), self._flat2(up), self._flat2(vp),
                   self._flat2(out), self.space.mul_table)
        return self._push(Node("lerp", (t, u, v), out,
                               needs_grad=self._ng(t, u, v), jet=True))

    def extract(self, x: int, alpha) -> int:
        """Plain (batch, features) array of the derivative d^alpha."""
        slot = self.space.slot(tuple(alpha))
        fac = self.space.factorials[slot]
        xp = self.nodes[x].primal
        out = self._alloc(xp.shape[1:])
        np.multiply(xp[slot], fac, out=out)
        return self._push(Node("extract", (x,), out, aux=(slot, fac),
                               needs_grad=self._ng(x)))

    # -- plain ops ---------------------------------------------------------
    def _binary(self, op, a, b, value):
        return self._push(Node(op, (a, b), value, needs_grad=self._ng(a, b)))

    def add(self, a: int, b: int) -> int:
        return self._binary("add", a, b,
                            self.nodes[a].primal + self.nodes[b].primal)

    def sub(self, a: int, b: int) -> int:
        return self._binary("sub", a, b,
                            self.nodes[a].primal - self.nodes[b].primal)

    def mul(self, a: int, b: int) -> int:
        """Elementwise product of plain arrays."""
        return self._binary("mul", a, b,
                            self.nodes[a].primal * self.nodes[b].primal)

    def scale(self, a: int, c: float) -> int:
        return self._push(Node("scale", (a,), self.nodes[a].primal * c,
                               aux=c, needs_grad=self._ng(a),
                               jet=self.nodes[a].jet))

    def add_const(self, a: int, c) -> int:
        node = self.nodes[a]
        if node.jet:
            p = node.primal.copy()
            p[0] += c
        else:
            p = node.primal + c
        return self._push(Node("add_const", (a,), p,
                               needs_grad=node.needs_grad, jet=node.jet))

    def neg(self, a: int) -> int:
        return self.scale(a, -1.0)

    def take(self, a: int, col: int) -> int:
        return self._push(Node("take", (a,), self.nodes[a].primal[:, col],
                               aux=col, needs_grad=self._ng(a)))

    def slice_rows(self, a: int, lo: int, hi: int) -> int:
        return self._push(Node("slice_rows", (a,),
                               self.nodes[a].primal[lo:hi], aux=(lo, hi),
                               needs_grad=self._ng(a)))

    def mean_slices(self, a: int, n_t: int) -> int:
        """(n_t*n_x,) -> per-slice means (n_t,)."""
        ap = self.nodes[a].primal
        n_x = ap.shape[0] // n_t
        if n_t * n_x != ap.shape[0]:
            raise ValueError("batch not divisible into time slices")
        return self._push(Node("mean_slices", (a,),
                               ap.reshape(n_t, n_x).mean(axis=1), aux=n_x,
                               needs_grad=self._ng(a)))

    def mean_all(self, a: int) -> int:
        ap = self.nodes[a].primal
        return self._push(Node("mean_all", (a,), float(np.mean(ap)),
                               aux=ap.size, needs_grad=self._ng(a)))

    def dot(self, a: int, b: int) -> int:
        return self._binary("dot", a, b,
                            float(np.dot(self.nodes[a].primal,
                                         self.nodes[b].primal)))

    def concat(self, a: int, b: int) -> int:
        ap, bp = self.nodes[a].primal, self.nodes[b].primal
        ap = np.atleast_1d(np.asarray(ap))
        bp = np.atleast_1d(np.asarray(bp))
        return self._push(Node("concat", (a, b), np.concatenate([ap, bp]),
                               aux=ap.size, needs_grad=self._ng(a, b)))

    def exp(self, a: int) -> int:
        return self._push(Node("exp", (a,), np.exp(self.nodes[a].primal),
                               needs_grad=self._ng(a)))

    def tanh(self, a: int) -> int:
        return self._push(Node("tanh", (a,), np.tanh(self.nodes[a].primal),
                               needs_grad=self._ng(a)))

    def cumsum_exclusive(self, a: int) -> int:
        ap = self.nodes[a].primal
        out = np.empty_like(ap)
        out[0] = 0.0
        np.cumsum(ap[:-1], out=out[1:])
        return self._push(Node("cumsum_exclusive", (a,), out,
                               needs_grad=self._ng(a)))

    def stop_gradient(self, a: int) -> int:
        return self._push(Node("stop_gradient", (a,), self.nodes[a].primal,
                               needs_grad=False))

    # -- reverse sweep -----------------------------------------------------
    def _adj(self, nid: int) -> np.ndarray:
        """Adjoint accumulator for node nid, zero-initialized on demand.

        Adjoint buffers come straight from the pool and go back the moment
        the node has been processed in the reverse sweep, so peak memory is
        the forward primals plus a couple of live adjoints.
        """
        node = self.nodes[nid]
        if node.adjoint is None:
            p = node.primal
            if isinstance(p, float):
                node.adjoint = 0.0
            else:
                arr = self.pool.take(np.shape(p))
                arr.fill(0.0)
                node.adjoint = arr
        return node.adjoint

    def _adj_target(self, nid: int):
        """(buffer, accumulate) pair for rules that write every element.

        A fresh buffer comes back uninitialized with accumulate False; the
        caller must then overwrite it completely, which skips the zero-fill
        pass `_adj` would pay.
        """
        node = self.nodes[nid]
        if node.adjoint is None:
            node.adjoint = self.pool.take(np.shape(node.primal))
            return node.adjoint, False
        return node.adjoint, True

    def _bump(self, nid: int, value):
        node = self.nodes[nid]
        if not node.needs_grad:
            return
        if isinstance(node.primal, float):
            node.adjoint = (node.adjoint or 0.0) + float(value)
        else:
            self._adj(nid)
            node.adjoint += value

    def gradient(self, loss: int, seed=1.0) -> dict[str, np.ndarray]:
        """d(loss)/d(params); zero arrays for parameters never touched."""
        grads = {name: np.zeros_like(v) for name, v in self.params.items()}
        self._sweep(loss, seed, grads, per_sample=None)
        return grads

    def per_sample_grad_sqnorm(self, out: int) -> np.ndarray:
        """For a per-sample output vector r (batch,), returns
        sum_theta (dr_b/dtheta)^2 for every sample b in one sweep.

        Valid only when no op below `out` mixes samples and every parameter
        feeds a single affine site, which holds for the network forwards
        built here.
        """
        rp = self.nodes[out].primal
        if rp.ndim != 1:
            raise ValueError("per-sample mode expects a 1-D output")
        for name, uses in self._param_use.items():
            if uses > 1:
                raise ValueError(f"parameter {name!r} used at {uses} sites; "
                                 "per-sample norms need single-site use")
        sq = np.zeros(rp.shape[0])
        self._sweep(out, np.ones_like(rp), grads=None, per_sample=sq)
        return sq

    def _sweep(self, root: int, seed, grads, per_sample):
        nodes = self.nodes
        root_node = nodes[root]
        if isinstance(root_node.primal, float):
            root_node.adjoint = float(seed)
        else:
            self._adj(root)
            root_node.adjoint += seed
        mixing = {"mean_slices", "mean_all", "dot", "slice_rows", "concat",
                  "cumsum_exclusive"}
        for nid in range(root, -1, -1):
            node = nodes[nid]
            dz = node.adjoint
            if dz is None:
                continue
            if per_sample is not None and node.op in mixing:
                raise ValueError(f"op {node.op} mixes samples; per-sample "
                                 "norms are undefined")
            self._backprop(nid, node, dz, grads, per_sample)
            if isinstance(dz, np.ndarray):
                self.pool.give(dz)
            node.adjoint = None

    # one `if` arm per op kind; adjoints accumulate with +=
    def _backprop(self, nid, node, dz, grads, per_sample):
        op = node.op
        nodes = self.nodes
        if op in ("const", "param_vec"):
            if op == "param_vec" and grads is not None:
                grads[node.aux] += dz
            return
        if op == "affine":
            (x,) = node.inputs
            w_name, b_name = node.aux
            xp = nodes[x].primal
            S, B, Fi = xp.shape
            Fo = dz.shape[2]
            x2 = xp.reshape(S * B, Fi)
            dz2 = dz.reshape(S * B, Fo)
            if grads is not None:
                grads[w_name] += x2.T @ dz2
                if b_name is not None:
                    grads[b_name] += dz[0].sum(axis=0)
            if per_sample is not None:
                A = np.einsum("sbi,tbi->stb", xp, xp, optimize=True)
                Z = np.einsum("sbo,tbo->stb", dz, dz, optimize=True)
                per_sample += np.einsum("stb,stb->b", A, Z, optimize=True)
                if b_name is not None:
                    per_sample += np.einsum("bo,bo->b", dz[0], dz[0])
            if nodes[x].needs_grad:
                W = self.params[w_name]
                adj, acc = self._adj_target(x)
                if acc:
                    tmp = self.pool.take((S * B, Fi))
                    np.matmul(dz2, W.T, out=tmp)
                    adj += tmp.reshape(S, B, Fi)
                    self.pool.give(tmp)
                else:
                    np.matmul(dz2, W.T, out=adj.reshape(S * B, Fi))
            return
        if op == "jet_mul":
            a, b = node.inputs
            ap, bp = nodes[a].primal, nodes[b].primal
            dz2 = self._flat2(dz)
            tab = self.space.mul_table
            if nodes[a].needs_grad and nodes[b].needs_grad:
                da, acc_a = self._adj_target(a)
                db, acc_b = self._adj_target(b)
                K.mul_bwd(dz2, self._flat2(ap), self._flat2(bp),
                          self._flat2(da), self._flat2(db), tab,
                          acc_a, acc_b)
            elif nodes[a].needs_grad:
                da, acc_a = self._adj_target(a)
                K.corr_acc(dz2, self._flat2(bp), self._flat2(da), tab, acc_a)
            elif nodes[b].needs_grad:
                db, acc_b = self._adj_target(b)
                K.corr_acc(dz2, self._flat2(ap), self._flat2(db), tab, acc_b)
            return
        if op == "jet_tanh":
            (x,) = node.inputs
            if nodes[x].needs_grad:
                dx, acc = self._adj_target(x)
                K.tanh_bwd(self._flat2(node.primal), self._flat2(dz),
                           self._flat2(dx), self.space.mul_table, acc)
            return
        if op in ("jet_exp", "jet_sin", "jet_cos", "jet_recip"):
            (x,) = node.inputs
            if nodes[x].needs_grad:
                if op == "jet_exp":
                    g = node.primal
                elif op == "jet_recip":
                    g = -jet_mul_arrays_cached(self.space, node.primal)
                else:
                    g = node.aux
                dx, acc = self._adj_target(x)
                K.corr_acc(self._flat2(dz), self._flat2(g),
                           self._flat2(dx), self.space.mul_table, acc)
            return
        if op == "lerp":
            t, u, v = node.inputs
            dt, acc_t = self._adj_target(t)
            du, acc_u = self._adj_target(u)
            dv, acc_v = self._adj_target(v)
            K.lerp_bwd(self._flat2(dz), self._flat2(nodes[t].primal),
                       self._flat2(nodes[u].primal),
                       self._flat2(nodes[v].primal),
                       self._flat2(dt), self._flat2(du), self._flat2(dv),
                       self.space.mul_table, acc_t, acc_u, acc_v)
            return
        if op == "extract":
            (x,) = node.inputs
            slot, fac = node.aux
            if nodes[x].needs_grad:
                self._adj(x)[slot] += fac * dz
            return
        if op == "add":
            a, b = node.inputs
            self._bump(a, dz)
            self._bump(b, dz)
            return
        if op == "sub":
            a, b = node.inputs
            self._bump(a, dz)
            self._bump(b, -dz)
            return
        if op == "mul":
            a, b = node.inputs
            self._bump(a, dz * nodes[b].primal)
            self._bump(b, dz * nodes[a].primal)
            return
        if op == "scale":
            self._bump(node.inputs[0], node.aux * dz)
            return
        if op == "add_const":
            self._bump(node.inputs[0], dz)
            return
        if op == "take":
            (a,) = node.inputs
            if nodes[a].needs_grad:
                self._adj(a)[:, node.aux] += dz
            return
        if op == "slice_rows":
            (a,) = node.inputs
            lo, hi = node.aux
            if nodes[a].needs_grad:
                self._adj(a)[lo:hi] += dz
            return
        if op == "mean_slices":
            (a,) = node.inputs
            n_x = node.aux
            if nodes[a].needs_grad:
                adj = self._adj(a)
                adj.reshape(-1, n_x)[...] += (dz / n_x)[:, None]
            return
        if op == "mean_all":
            (a,) = node.inputs
            self._bump(a, np.full(np.shape(nodes[a].primal),
                                  dz / node.aux))
            return
        if op == "dot":
            a, b = node.inputs
            self._bump(a, dz * nodes[b].primal)
            self._bump(b, dz * nodes[a].primal)
            return
        if op == "concat":
            a, b = node.inputs
            na = node.aux
            self._bump(a, dz[:na] if np.ndim(nodes[a].primal) else dz[0])
            self._bump(b, dz[na:])
            return
        if op == "exp":
            self._bump(node.inputs[0], dz * node.primal)
            return
        if op == "tanh":
            self._bump(node.inputs[0], dz * (1.0 - node.primal ** 2))
            return
        if op == "cumsum_exclusive":
            (a,) = node.inputs
            if nodes[a].needs_grad:
                # d(out_i)/d(a_k) = 1 for i > k, so the adjoint of a_k is
                # the suffix sum of dz beyond k
                suffix = np.cumsum(dz[::-1])[::-1]
                rev = np.empty_like(dz)
                rev[:-1] = suffix[1:]
                rev[-1] = 0.0
                self._adj(a)[...] += rev
            return
        if op == "stop_gradient":
            return
        raise ValueError(f"no adjoint rule for op {op!r}")


def jet_mul_arrays_cached(space, y):
    """y*y for the reciprocal backward factor."""
    out = np.empty_like(y)
    K.mul_fwd(y.reshape(y.shape[0], -1), y.reshape(y.shape[0], -1),
              out.reshape(out.shape[0], -1), space.mul_table)
    return out

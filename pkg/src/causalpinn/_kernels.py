"""Hot elementwise kernels for jet arithmetic.

Every kernel exists twice: a blocked numba version (the default) and a plain
numpy version kept both as a fallback and as the reference implementation the
numba path is tested against.  All kernels take 2D coefficient views with the
slot axis first, shape (n_slots, M), plus an (n_triples, 3) table of
(i, j, k) slot triples with alpha_k = alpha_i + alpha_j.

Output conventions: *_fwd kernels overwrite their output.  *_bwd kernels take
one boolean per adjoint argument: True accumulates (+=) into a prepared
buffer, False overwrites, which lets callers hand over uninitialized memory
and skip a separate zeroing pass.

The numba kernels accumulate into small per-block tiles so the compiler can
prove the stores never alias the inputs; the tiles live in L1 and each output
row is streamed exactly once per block.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap

_BLK = 128
_JIT = dict(nogil=True, fastmath=True, cache=True)


# ---------------------------------------------------------------------------
# numpy reference implementations

def np_mul_fwd(a, b, out, tab):
    out[:] = 0.0
    for i, j, k in tab:
        out[k] += a[i] * b[j]


def np_mul_bwd(dz, a, b, da, db, tab, acc_a=True, acc_b=True):
    if not acc_a:
        da[...] = 0.0
    if not acc_b:
        db[...] = 0.0
    for i, j, k in tab:
        da[i] += dz[k] * b[j]
        db[j] += dz[k] * a[i]


def np_corr_acc(dz, g, du, tab, acc=True):
    """du[j] (+)= sum_k dz[k] * g[k-j]: adjoint of multiplication by the
    fixed jet g."""
    if not acc:
        du[...] = 0.0
    for i, j, k in tab:
        du[j] += dz[k] * g[i]


def np_compose_fwd(series, u, out, tab_nc, n_slots):
    """Horner evaluation of a univariate series over u's non-constant part."""
    d1 = series.shape[0]
    r = np.zeros_like(out)
    r[0] = series[d1 - 1]
    for kk in range(d1 - 2, -1, -1):
        t = np.zeros_like(out)
        for i, j, k in tab_nc:
            t[k] += r[i] * u[j]
        r = t
        r[0] += series[kk]
    out[:] = r


def np_tanh_fwd(t0, u, out, tab_nc, n_slots, degree):
    d1 = degree + 1
    ser = np.empty((d1,) + t0.shape)
    ser[0] = t0
    for k in range(degree):
        acc = sum(ser[j] * ser[k - j] for j in range(k + 1))
        ser[k + 1] = ((1.0 if k == 0 else 0.0) - acc) / (k + 1)
    np_compose_fwd(ser, u, out, tab_nc, n_slots)


def np_tanh_bwd(y, dz, du, tab, acc=True):
    g = np.zeros_like(y)
    for i, j, k in tab:
        g[k] -= y[i] * y[j]
    g[0] += 1.0
    np_corr_acc(dz, g, du, tab, acc)


def np_lerp_fwd(t, u, v, out, tab):
    """out = u + t*(v - u), the gated mix of the modified MLP."""
    d = v - u
    out[:] = u
    for i, j, k in tab:
        out[k] += t[i] * d[j]


def np_lerp_bwd(dh, t, u, v, dt, du, dv, tab,
                acc_t=True, acc_u=True, acc_v=True):
    d = v - u
    q = np.zeros_like(dh)
    nt = np.zeros_like(dh)
    for i, j, k in tab:
        nt[i] += dh[k] * d[j]
        q[j] += dh[k] * t[i]
    if acc_t:
        dt += nt
    else:
        dt[...] = nt
    if acc_v:
        dv += q
    else:
        dv[...] = q
    if acc_u:
        du += dh - q
    else:
        du[...] = dh - q


# ---------------------------------------------------------------------------
# numba versions

@njit(**_JIT)
def _nb_mul_fwd(a, b, out, tab):
    S, M = out.shape
    ntr = tab.shape[0]
    acc = np.empty((S, _BLK))
    for m0 in range(0, M, _BLK):
        w = min(_BLK, M - m0)
        for s in range(S):
            for m in range(w):
                acc[s, m] = 0.0
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                acc[k, m] += a[i, m0 + m] * b[j, m0 + m]
        for s in range(S):
            for m in range(w):
                out[s, m0 + m] = acc[s, m]


@njit(**_JIT)
def _nb_mul_bwd(dz, a, b, da, db, tab, acc_a=True, acc_b=True):
    S, M = dz.shape
    ntr = tab.shape[0]
    ta = np.empty((S, _BLK))
    tb = np.empty((S, _BLK))
    for m0 in range(0, M, _BLK):
        w = min(_BLK, M - m0)
        for s in range(S):
            for m in range(w):
                ta[s, m] = 0.0
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                ta[i, m] += dz[k, m0 + m] * b[j, m0 + m]
        for s in range(S):
            for m in range(w):
                tb[s, m] = 0.0
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                tb[j, m] += dz[k, m0 + m] * a[i, m0 + m]
        if acc_a:
            for s in range(S):
                for m in range(w):
                    da[s, m0 + m] += ta[s, m]
        else:
            for s in range(S):
                for m in range(w):
                    da[s, m0 + m] = ta[s, m]
        if acc_b:
            for s in range(S):
                for m in range(w):
                    db[s, m0 + m] += tb[s, m]
        else:
            for s in range(S):
                for m in range(w):
                    db[s, m0 + m] = tb[s, m]


@njit(**_JIT)
def _nb_corr_acc(dz, g, du, tab, acc=True):
    S, M = dz.shape
    ntr = tab.shape[0]
    td = np.empty((S, _BLK))
    for m0 in range(0, M, _BLK):
        w = min(_BLK, M - m0)
        for s in range(S):
            for m in range(w):
                td[s, m] = 0.0
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                td[j, m] += dz[k, m0 + m] * g[i, m0 + m]
        if acc:
            for s in range(S):
                for m in range(w):
                    du[s, m0 + m] += td[s, m]
        else:
            for s in range(S):
                for m in range(w):
                    du[s, m0 + m] = td[s, m]


@njit(**_JIT)
def _nb_compose_fwd(series, u, out, tab_nc, n_slots):
    d1, M = series.shape
    S = n_slots
    ntr = tab_nc.shape[0]
    r = np.empty((S, _BLK))
    t = np.empty((S, _BLK))
    for m0 in range(0, M, _BLK):
        w = min(_BLK, M - m0)
        for s in range(S):
            for m in range(w):
                r[s, m] = 0.0
        for m in range(w):
            r[0, m] = series[d1 - 1, m0 + m]
        for kk in range(d1 - 2, -1, -1):
            for s in range(S):
                for m in range(w):
                    t[s, m] = 0.0
            for n in range(ntr):
                i, j, k = tab_nc[n, 0], tab_nc[n, 1], tab_nc[n, 2]
                for m in range(w):
                    t[k, m] += r[i, m] * u[j, m0 + m]
            r, t = t, r
            for m in range(w):
                r[0, m] += series[kk, m0 + m]
        for s in range(S):
            for m in range(w):
                out[s, m0 + m] = r[s, m]


@njit(**_JIT)
def _nb_tanh_fwd(t0, u, out, tab_nc, n_slots, degree):
    S, M = n_slots, u.shape[1]
    ntr = tab_nc.shape[0]
    d1 = degree + 1
    ser = np.empty((d1, _BLK))
    sacc = np.empty(_BLK)
    r = np.empty((S, _BLK))
    t = np.empty((S, _BLK))
    for m0 in range(0, M, _BLK):
        w = min(_BLK, M - m0)
        for m in range(w):
            ser[0, m] = t0[m0 + m]
        for k in range(degree):
            for m in range(w):
                sacc[m] = 0.0
            for j in range(k + 1):
                for m in range(w):
                    sacc[m] += ser[j, m] * ser[k - j, m]
            lead = 1.0 if k == 0 else 0.0
            inv = 1.0 / (k + 1)
            for m in range(w):
                ser[k + 1, m] = (lead - sacc[m]) * inv
        for s in range(S):
            for m in range(w):
                r[s, m] = 0.0
        for m in range(w):
            r[0, m] = ser[d1 - 1, m]
        for kk in range(d1 - 2, -1, -1):
            for s in range(S):
                for m in range(w):
                    t[s, m] = 0.0
            for n in range(ntr):
                i, j, k = tab_nc[n, 0], tab_nc[n, 1], tab_nc[n, 2]
                for m in range(w):
                    t[k, m] += r[i, m] * u[j, m0 + m]
            r, t = t, r
            for m in range(w):
                r[0, m] += ser[kk, m]
        for s in range(S):
            for m in range(w):
                out[s, m0 + m] = r[s, m]


@njit(**_JIT)
def _nb_tanh_bwd(y, dz, du, tab, acc=True):
    S, M = y.shape
    ntr = tab.shape[0]
    g = np.empty((S, _BLK))
    td = np.empty((S, _BLK))
    for m0 in range(0, M, _BLK):
        w = min(_BLK, M - m0)
        for s in range(S):
            for m in range(w):
                g[s, m] = 0.0
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                g[k, m] -= y[i, m0 + m] * y[j, m0 + m]
        for m in range(w):
            g[0, m] += 1.0
        for s in range(S):
            for m in range(w):
                td[s, m] = 0.0
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                td[j, m] += dz[k, m0 + m] * g[i, m]
        if acc:
            for s in range(S):
                for m in range(w):
                    du[s, m0 + m] += td[s, m]
        else:
            for s in range(S):
                for m in range(w):
                    du[s, m0 + m] = td[s, m]


@njit(**_JIT)
def _nb_lerp_fwd(t, u, v, out, tab):
    S, M = out.shape
    ntr = tab.shape[0]
    d = np.empty((S, _BLK))
    o = np.empty((S, _BLK))
    for m0 in range(0, M, _BLK):
        w = min(_BLK, M - m0)
        for s in range(S):
            for m in range(w):
                uv = u[s, m0 + m]
                d[s, m] = v[s, m0 + m] - uv
                o[s, m] = uv
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                o[k, m] += t[i, m0 + m] * d[j, m]
        for s in range(S):
            for m in range(w):
                out[s, m0 + m] = o[s, m]


@njit(**_JIT)
def _nb_lerp_bwd(dh, t, u, v, dt, du, dv, tab,
                 acc_t=True, acc_u=True, acc_v=True):
    S, M = dh.shape
    ntr = tab.shape[0]
    d = np.empty((S, _BLK))
    tt = np.empty((S, _BLK))
    q = np.empty((S, _BLK))
    for m0 in range(0, M, _BLK):
        w = min(_BLK, M - m0)
        for s in range(S):
            for m in range(w):
                d[s, m] = v[s, m0 + m] - u[s, m0 + m]
                tt[s, m] = 0.0
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                tt[i, m] += dh[k, m0 + m] * d[j, m]
        for s in range(S):
            for m in range(w):
                q[s, m] = 0.0
        for n in range(ntr):
            i, j, k = tab[n, 0], tab[n, 1], tab[n, 2]
            for m in range(w):
                q[j, m] += dh[k, m0 + m] * t[i, m0 + m]
        if acc_t:
            for s in range(S):
                for m in range(w):
                    dt[s, m0 + m] += tt[s, m]
        else:
            for s in range(S):
                for m in range(w):
                    dt[s, m0 + m] = tt[s, m]
        if acc_v:
            for s in range(S):
                for m in range(w):
                    dv[s, m0 + m] += q[s, m]
        else:
            for s in range(S):
                for m in range(w):
                    dv[s, m0 + m] = q[s, m]
        if acc_u:
            for s in range(S):
                for m in range(w):
                    du[s, m0 + m] += dh[s, m0 + m] - q[s, m]
        else:
            for s in range(S):
                for m in range(w):
                    du[s, m0 + m] = dh[s, m0 + m] - q[s, m]


# ---------------------------------------------------------------------------
# dispatch

_BACKENDS = {
    "numpy": dict(
        mul_fwd=np_mul_fwd, mul_bwd=np_mul_bwd, corr_acc=np_corr_acc,
        compose_fwd=np_compose_fwd, tanh_fwd=np_tanh_fwd,
        tanh_bwd=np_tanh_bwd, lerp_fwd=np_lerp_fwd, lerp_bwd=np_lerp_bwd),
}
if HAVE_NUMBA:
    _BACKENDS["numba"] = dict(
        mul_fwd=_nb_mul_fwd, mul_bwd=_nb_mul_bwd, corr_acc=_nb_corr_acc,
        compose_fwd=_nb_compose_fwd, tanh_fwd=_nb_tanh_fwd,
        tanh_bwd=_nb_tanh_bwd, lerp_fwd=_nb_lerp_fwd, lerp_bwd=_nb_lerp_bwd)

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def set_backend(name: str) -> None:
    global BACKEND, mul_fwd, mul_bwd, corr_acc, compose_fwd
    global tanh_fwd, tanh_bwd, lerp_fwd, lerp_bwd
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; "
                         f"available: {sorted(_BACKENDS)}")
    BACKEND = name
    b = _BACKENDS[name]
    mul_fwd = b["mul_fwd"]
    mul_bwd = b["mul_bwd"]
    corr_acc = b["corr_acc"]
    compose_fwd = b["compose_fwd"]
    tanh_fwd = b["tanh_fwd"]
    tanh_bwd = b["tanh_bwd"]
    lerp_fwd = b["lerp_fwd"]
    lerp_bwd = b["lerp_bwd"]


set_backend(BACKEND)

"""Multivariate truncated-Taylor (jet) arithmetic.

A jet stores the Taylor coefficients c_alpha = d^alpha f / alpha! of a scalar
function of 1-3 variables, dense over all multi-indices with |alpha| <= degree,
in graded-lexicographic order.  Multiplication is then a plain truncated
convolution and factorials appear only at extraction.

Coefficient arrays carry the slot axis first: shape (n_slots, *batch), so a
whole collocation batch moves through one kernel call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from . import _kernels as K

MAX_VARS = 3
MAX_DEGREE = 4


def _grlex_key(a: tuple[int, ...]):
    return (sum(a), tuple(-x for x in a))


def graded_indices(num_vars: int, degree: int) -> list[tuple[int, ...]]:
    """All multi-indices with |alpha| <= degree, graded-lexicographic.

    Within a degree block, earlier variables rank first: for two variables
    (1,0) precedes (0,1).
    """
    out = [a for a in product(range(degree + 1), repeat=num_vars)
           if sum(a) <= degree]
    out.sort(key=_grlex_key)
    return out


def downward_closure(alphas) -> tuple[tuple[int, ...], ...]:
    """Smallest componentwise-downward-closed set containing alphas,
    graded-lexicographic sorted."""
    seen: set[tuple[int, ...]] = set()
    for a in alphas:
        a = tuple(int(v) for v in a)
        seen.update(product(*(range(v + 1) for v in a)))
    return tuple(sorted(seen, key=_grlex_key))


def get_space(num_vars: int, degree: int,
              keep=None) -> "JetSpace":
    """The full truncation space, or (with `keep`) the quotient keeping only
    the listed multi-indices.  `keep` must be downward closed under
    componentwise <=; then every retained coefficient of any {+,*,compose}
    expression equals the full-space result exactly, because a product can
    only feed slot k from slots componentwise <= k."""
    if keep is not None:
        keep = tuple(sorted({tuple(int(v) for v in a) for a in keep},
                            key=_grlex_key))
    return _space_cached(num_vars, degree, keep)


@lru_cache(maxsize=None)
def _space_cached(num_vars: int, degree: int, keep) -> "JetSpace":
    return JetSpace(num_vars, degree, keep)


class JetSpace:
    """Precomputed index tables for one (num_vars, degree) combination."""

    def __init__(self, num_vars: int, degree: int, keep=None):
        if not (1 <= num_vars <= MAX_VARS):
            raise ValueError(f"num_vars must be 1..{MAX_VARS}, got {num_vars}")
        if not (1 <= degree <= MAX_DEGREE):
            raise ValueError(f"degree must be 1..{MAX_DEGREE}, got {degree}")
        self.num_vars = num_vars
        self.degree = degree
        if keep is None:
            self.indices = graded_indices(num_vars, degree)
            assert len(self.indices) == math.comb(num_vars + degree, degree)
        else:
            self.indices = sorted((tuple(int(v) for v in a) for a in keep),
                                  key=_grlex_key)
            kept = set(self.indices)
            for a in self.indices:
                if len(a) != num_vars or min(a) < 0 or sum(a) > degree:
                    raise ValueError(f"multi-index {a} invalid for "
                                     f"{num_vars} vars, degree {degree}")
                for v, av in enumerate(a):
                    below = a[:v] + (av - 1,) + a[v + 1:]
                    if av > 0 and below not in kept:
                        raise ValueError(
                            f"slot set is not downward closed: {a} kept "
                            f"but {below} missing")
        self.restricted = keep is not None
        self.n_slots = len(self.indices)
        self.slot_of = {a: s for s, a in enumerate(self.indices)}
        # alpha! per slot, for extraction
        self.factorials = np.array(
            [math.prod(math.factorial(x) for x in a) for a in self.indices],
            dtype=np.float64)
        # triple table (i, j, k): slot k = slot i + slot j, k retained
        trips = []
        for i, ai in enumerate(self.indices):
            for j, aj in enumerate(self.indices):
                k = self.slot_of.get(tuple(x + y for x, y in zip(ai, aj)))
                if k is not None:
                    trips.append((i, j, k))
        self.mul_table = np.array(trips, dtype=np.int64)
        # variant for factors with a zero constant slot (series composition)
        self.mul_table_nc = self.mul_table[self.mul_table[:, 1] != 0].copy()

    def slot(self, alpha: tuple[int, ...]) -> int:
        try:
            return self.slot_of[tuple(alpha)]
        except KeyError:
            raise ValueError(f"multi-index {alpha} outside degree "
                             f"{self.degree} space") from None

    def has(self, alpha) -> bool:
        return tuple(alpha) in self.slot_of

    def __repr__(self):
        tail = f", n_slots={self.n_slots}" if self.restricted else ""
        return f"JetSpace(num_vars={self.num_vars}, degree={self.degree}{tail})"


# ---------------------------------------------------------------------------
# elementary univariate series
#
# For f(u) with u a jet, write u = c0 + u_hat.  The composed jet is the Horner
# evaluation of the univariate Taylor series of f at c0 in the truncated ring,
# where powers of u_hat never touch the constant slot.

def tanh_series(c0: np.ndarray, degree: int) -> np.ndarray:
    """Taylor coefficients of tanh at c0, via t' = 1 - t^2."""
    t = np.empty((degree + 1,) + np.shape(c0), dtype=np.float64)
    t[0] = np.tanh(c0)
    for k in range(degree):
        acc = sum(t[j] * t[k - j] for j in range(k + 1))
        t[k + 1] = ((1.0 if k == 0 else 0.0) - acc) / (k + 1)
    return t


def exp_series(c0: np.ndarray, degree: int) -> np.ndarray:
    e = np.exp(c0)
    return np.stack([e / math.factorial(k) for k in range(degree + 1)])


def sin_series(c0: np.ndarray, degree: int) -> np.ndarray:
    s, c = np.sin(c0), np.cos(c0)
    cycle = [s, c, -s, -c]
    return np.stack([cycle[k % 4] / math.factorial(k)
                     for k in range(degree + 1)])


def cos_series(c0: np.ndarray, degree: int) -> np.ndarray:
    s, c = np.sin(c0), np.cos(c0)
    cycle = [c, -s, -c, s]
    return np.stack([cycle[k % 4] / math.factorial(k)
                     for k in range(degree + 1)])


def recip_series(c0: np.ndarray, degree: int) -> np.ndarray:
    inv = 1.0 / c0
    return np.stack([((-1.0) ** k) * inv ** (k + 1)
                     for k in range(degree + 1)])


# ---------------------------------------------------------------------------
# array-level operations (slot axis first); the building blocks for both the
# MultiJet convenience wrapper and the reverse tape

def _flat(c: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(c).reshape(c.shape[0], -1)


def jet_mul_arrays(space: JetSpace, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    K.mul_fwd(_flat(a), _flat(b), out.reshape(out.shape[0], -1),
              space.mul_table)
    return out


def jet_compose_arrays(space: JetSpace, series: np.ndarray,
                       u: np.ndarray) -> np.ndarray:
    """Horner evaluation of a univariate series over the non-constant part of u."""
    out = np.empty_like(u)
    K.compose_fwd(series.reshape(series.shape[0], -1), _flat(u),
                  out.reshape(out.shape[0], -1), space.mul_table_nc,
                  space.n_slots)
    return out


def jet_recip_arrays(space: JetSpace, a: np.ndarray) -> np.ndarray:
    c0 = a[0]
    if np.any(c0 == 0.0):
        raise ZeroDivisionError("jet division by zero constant term")
    return jet_compose_arrays(space, recip_series(c0, space.degree), a)


# ---------------------------------------------------------------------------

@dataclass
class MultiJet:
    """Truncated Taylor polynomial; immutable by convention.

    coeffs has shape (n_slots,) for a scalar jet, or (n_slots, *batch) for a
    batch of jets sharing the expansion structure.
    """

    space: JetSpace
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape[0] != self.space.n_slots:
            raise ValueError(
                f"expected {self.space.n_slots} coefficient slots, got "
                f"{self.coeffs.shape[0]}")

    # -- constructors ------------------------------------------------------
    @staticmethod
    def seed(values, var_index: int | None, num_vars: int,
             degree: int) -> "MultiJet":
        """Jet of the coordinate function x_{var_index}, or a constant."""
        space = get_space(num_vars, degree)
        values = np.asarray(values, dtype=np.float64)
        c = np.zeros((space.n_slots,) + values.shape)
        c[0] = values
        if var_index is not None:
            if not 0 <= var_index < num_vars:
                raise ValueError(f"var_index {var_index} out of range for "
                                 f"{num_vars} variables")
            unit = tuple(1 if v == var_index else 0 for v in range(num_vars))
            c[space.slot(unit)] = 1.0
        return MultiJet(space, c)

    @staticmethod
    def constant(values, num_vars: int, degree: int) -> "MultiJet":
        return MultiJet.seed(values, None, num_vars, degree)

    # -- ring operations ---------------------------------------------------
    def _check(self, other: "MultiJet"):
        if other.space is not self.space:
            if (other.space.num_vars != self.space.num_vars
                    or other.space.degree != self.space.degree):
                raise ValueError("jets live in different spaces: "
                                 f"{self.space} vs {other.space}")

    def __add__(self, other):
        if isinstance(other, MultiJet):
            self._check(other)
            return MultiJet(self.space, self.coeffs + other.coeffs)
        c = self.coeffs.copy()
        c[0] += other
        return MultiJet(self.space, c)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, MultiJet):
            self._check(other)
            return MultiJet(self.space, self.coeffs - other.coeffs)
        c = self.coeffs.copy()
        c[0] -= other
        return MultiJet(self.space, c)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __neg__(self):
        return MultiJet(self.space, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, MultiJet):
            self._check(other)
            return MultiJet(self.space,
                            jet_mul_arrays(self.space, self.coeffs,
                                           other.coeffs))
        return MultiJet(self.space, self.coeffs * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, MultiJet):
            self._check(other)
            return self * other.recip()
        return MultiJet(self.space, self.coeffs / float(other))

    def __rtruediv__(self, other):
        return self.recip() * float(other)

    def recip(self) -> "MultiJet":
        return MultiJet(self.space, jet_recip_arrays(self.space, self.coeffs))

    def powi(self, n: int) -> "MultiJet":
        if n < 0:
            return self.recip().powi(-n)
        result = MultiJet.constant(np.ones(self.coeffs.shape[1:]),
                                   self.space.num_vars, self.space.degree)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    # -- elementary compositions ------------------------------------------
    def _compose(self, series_fn) -> "MultiJet":
        s = series_fn(self.coeffs[0], self.space.degree)
        return MultiJet(self.space,
                        jet_compose_arrays(self.space, s, self.coeffs))

    def tanh(self) -> "MultiJet":
        return self._compose(tanh_series)

    def exp(self) -> "MultiJet":
        return self._compose(exp_series)

    def sin(self) -> "MultiJet":
        return self._compose(sin_series)

    def cos(self) -> "MultiJet":
        return self._compose(cos_series)

    # -- extraction --------------------------------------------------------
    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def extract(self, alpha) -> np.ndarray:
        """The derivative d^alpha f = alpha! * c_alpha."""
        s = self.space.slot(tuple(alpha))
        return self.space.factorials[s] * self.coeffs[s]

"""Alternating forms on R^m with complex coefficients.

A k-form stores one coefficient per strictly increasing multi-index of size k,
in lexicographic order, along the last axis of ``coeffs``; leading axes are a
batch.  Wedge and interior products use precomputed sign tables.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np


@lru_cache(maxsize=None)
def basis(dim, k):
    return tuple(itertools.combinations(range(dim), k))


@lru_cache(maxsize=None)
def _position(dim, k):
    return {idx: i for i, idx in enumerate(basis(dim, k))}


def _merge_sign(a, b):
    """Sign of the permutation sorting the concatenation a + b (disjoint, each sorted)."""
    inversions = sum(1 for x in a for y in b if x > y)
    return -1.0 if inversions % 2 else 1.0


@lru_cache(maxsize=None)
def _wedge_table(dim, p, q):
    left, right, sign, target = [], [], [], []
    pos_out = _position(dim, p + q)
    for i, a in enumerate(basis(dim, p)):
        sa = set(a)
        for j, b in enumerate(basis(dim, q)):
            if sa.isdisjoint(b):
                left.append(i)
                right.append(j)
                sign.append(_merge_sign(a, b))
                target.append(pos_out[tuple(sorted(a + b))])
    order = np.argsort(target, kind="stable")
    target = np.asarray(target)[order]
    starts = np.flatnonzero(np.r_[True, target[1:] != target[:-1]])
    return (np.asarray(left)[order], np.asarray(right)[order], np.asarray(sign)[order], starts)


@lru_cache(maxsize=None)
def _contract_table(dim, k):
    """v _| alpha for a k-form alpha: out[J] = sum_i (-1)^pos(i in I) v_i alpha[I], I = J + {i}."""
    vec, src, sign, target = [], [], [], []
    pos_in = _position(dim, k)
    for t, J in enumerate(basis(dim, k - 1)):
        for i in range(dim):
            if i in J:
                continue
            I = tuple(sorted(J + (i,)))
            vec.append(i)
            src.append(pos_in[I])
            sign.append(-1.0 if I.index(i) % 2 else 1.0)
            target.append(t)
    starts = np.flatnonzero(np.r_[True, np.diff(target) != 0])
    return np.asarray(vec), np.asarray(src), np.asarray(sign), starts


@dataclass(frozen=True)
class AltForm:
    dim: int
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        expected = comb(self.dim, self.degree)
        if self.coeffs.shape[-1:] != (expected,):
            raise ValueError(f"a {self.degree}-form on R^{self.dim} needs {expected} coefficients")

    @classmethod
    def zero(cls, dim, degree, batch=()):
        return cls(dim, degree, np.zeros(tuple(batch) + (comb(dim, degree),), dtype=complex))

    @classmethod
    def from_dict(cls, dim, degree, entries: dict, batch=()):
        form = cls.zero(dim, degree, batch)
        pos = _position(dim, degree)
        for idx, value in entries.items():
            idx = tuple(idx)
            if list(idx) != sorted(set(idx)):
                raise ValueError(f"multi-index {idx} is not strictly increasing")
            form.coeffs[..., pos[idx]] = value
        return form

    @classmethod
    def one_form(cls, components):
        """1-form with the given coefficients on the coordinate covectors (last axis)."""
        c = np.asarray(components, dtype=complex)
        return cls(c.shape[-1], 1, c)

    @property
    def batch_shape(self):
        return self.coeffs.shape[:-1]

    def as_dict(self, tol=0.0) -> dict:
        """Nonzero coefficients keyed by multi-index (unbatched forms only)."""
        if self.batch_shape:
            raise ValueError("as_dict needs an unbatched form")
        return {idx: complex(c) for idx, c in zip(basis(self.dim, self.degree), self.coeffs) if abs(c) > tol}

    def component(self, idx):
        return self.coeffs[..., _position(self.dim, self.degree)[tuple(idx)]]

    def top(self):
        """Coefficient of the volume form e_0 ^ ... ^ e_{dim-1}."""
        if self.degree != self.dim:
            raise ValueError(f"top() needs a {self.dim}-form, got degree {self.degree}")
        return self.coeffs[..., 0]

    def _check(self, other):
        if not isinstance(other, AltForm) or other.dim != self.dim:
            raise TypeError("forms must live on the same space")

    def __add__(self, other):
        self._check(other)
        if other.degree != self.degree:
            raise ValueError("cannot add forms of different degree")
        return AltForm(self.dim, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return AltForm(self.dim, self.degree, -self.coeffs)

    def __mul__(self, scalar):
        s = np.asarray(scalar)
        if s.ndim:
            s = s[..., None]
        return AltForm(self.dim, self.degree, self.coeffs * s)

    __rmul__ = __mul__

    def conj(self):
        return AltForm(self.dim, self.degree, np.conj(self.coeffs))

    def wedge(self, other: "AltForm") -> "AltForm":
        self._check(other)
        p, q = self.degree, other.degree
        if p + q > self.dim:
            batch = np.broadcast_shapes(self.batch_shape, other.batch_shape)
            return AltForm.zero(self.dim, p + q, batch)
        left, right, sign, starts = _wedge_table(self.dim, p, q)
        prod = self.coeffs[..., left] * other.coeffs[..., right] * sign
        return AltForm(self.dim, p + q, np.add.reduceat(prod, starts, axis=-1))

    __xor__ = wedge

    def power(self, k: int) -> "AltForm":
        """k-fold wedge power (k = 0 gives the constant 1)."""
        out = AltForm(self.dim, 0, np.ones(self.batch_shape + (1,), dtype=complex))
        for _ in range(k):
            out = out.wedge(self)
        return out

    def interior(self, v) -> "AltForm":
        """Contraction v _| self with a (batched) vector v."""
        if self.degree == 0:
            raise ValueError("cannot contract a 0-form")
        v = np.asarray(v)
        if self.degree > self.dim:
            return AltForm.zero(self.dim, self.degree - 1, np.broadcast_shapes(self.batch_shape, v.shape[:-1]))
        vec, src, sign, starts = _contract_table(self.dim, self.degree)
        prod = v[..., vec] * self.coeffs[..., src] * sign
        return AltForm(self.dim, self.degree - 1, np.add.reduceat(prod, starts, axis=-1))

    def allclose(self, other, rtol=1e-12, atol=1e-12):
        return self.degree == other.degree and np.allclose(self.coeffs, other.coeffs, rtol=rtol, atol=atol)


def wedge_all(*forms: AltForm) -> AltForm:
    out = forms[0]
    for f in forms[1:]:
        out = out.wedge(f)
    return out

"""Affine expressions over real scalar variables and a program builder.

An :class:`Affine` holds a constant array and one coefficient array per
variable (stacked on a trailing axis), so complex Hermitian matrix
expressions in the beamforming matrices can be formed with ordinary matrix
algebra and then lowered to real cone rows.
"""

from __future__ import annotations

import numbers

import numpy as np
import scipy.sparse as sp

from .cones import NONNEG, PSD, SOC, ZERO, ConeBlock, ConeSpec, svec, tri_indices
from .program import ConicProgram


class Affine:
    __array_priority__ = 100  # keep ndarray @ Affine routed to __rmatmul__

    def __init__(self, coef: np.ndarray, const: np.ndarray):
        self.coef = coef
        self.const = const

    # -- construction ---------------------------------------------------------------
    @classmethod
    def constant(cls, value, nvars: int = 0) -> "Affine":
        value = np.asarray(value)
        return cls(np.zeros(value.shape + (nvars,), dtype=value.dtype), value.copy())

    @property
    def shape(self) -> tuple[int, ...]:
        return self.const.shape

    @property
    def nvars(self) -> int:
        return self.coef.shape[-1]

    def padded(self, nvars: int) -> "Affine":
        if nvars == self.nvars:
            return self
        pad = np.zeros(self.coef.shape[:-1] + (nvars - self.nvars,), dtype=self.coef.dtype)
        return Affine(np.concatenate([self.coef, pad], axis=-1), self.const)

    @staticmethod
    def _lift(other, nvars: int) -> "Affine":
        if isinstance(other, Affine):
            return other.padded(max(nvars, other.nvars))
        return Affine.constant(other, nvars)

    def _aligned(self, other):
        other = other if isinstance(other, Affine) else Affine.constant(other, self.nvars)
        n = max(self.nvars, other.nvars)
        return self.padded(n), other.padded(n)

    # -- arithmetic -------------------------------------------------------------------
    def __add__(self, other):
        a, b = self._aligned(other)
        return Affine(a.coef + b.coef, a.const + b.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.coef, -self.const)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Affine) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k):
        if not isinstance(k, numbers.Number):
            k = np.asarray(k)
            if k.ndim:
                return Affine(self.coef * k[..., None], self.const * k)
        return Affine(self.coef * k, self.const * k)

    __rmul__ = __mul__

    def __truediv__(self, k):
        return self * (1.0 / k)

    def __matmul__(self, m):
        m = np.asarray(m)
        if self.const.ndim == 2 and m.ndim == 2:
            return Affine(np.einsum("ijv,jk->ikv", self.coef, m), self.const @ m)
        if self.const.ndim == 2 and m.ndim == 1:
            return Affine(np.einsum("ijv,j->iv", self.coef, m), self.const @ m)
        raise ValueError("unsupported matmul shapes")

    def __rmatmul__(self, m):
        m = np.asarray(m)
        if m.ndim == 2 and self.const.ndim == 2:
            return Affine(np.einsum("ij,jkv->ikv", m, self.coef), m @ self.const)
        if m.ndim == 2 and self.const.ndim == 1:
            return Affine(np.einsum("ij,jv->iv", m, self.coef), m @ self.const)
        if m.ndim == 1 and self.const.ndim == 1:
            return Affine(np.einsum("j,jv->v", m, self.coef), m @ self.const)
        raise ValueError("unsupported matmul shapes")

    def __getitem__(self, key):
        key = key if isinstance(key, tuple) else (key,)
        return Affine(self.coef[key + (Ellipsis,)] if Ellipsis not in key else self.coef[key],
                      self.const[key])

    # -- structure --------------------------------------------------------------------
    @property
    def real(self) -> "Affine":
        return Affine(np.real(self.coef).copy(), np.real(self.const).copy())

    @property
    def imag(self) -> "Affine":
        return Affine(np.imag(self.coef).copy(), np.imag(self.const).copy())

    @property
    def H(self) -> "Affine":
        if self.const.ndim == 2:
            return Affine(np.conj(np.swapaxes(self.coef, 0, 1)), self.const.conj().T)
        return Affine(np.conj(self.coef), np.conj(self.const))

    @property
    def T(self) -> "Affine":
        return Affine(np.swapaxes(self.coef, 0, 1), self.const.T)

    def trace(self) -> "Affine":
        return Affine(np.einsum("iiv->v", self.coef), np.trace(self.const))

    def quad(self, h: np.ndarray) -> "Affine":
        """h^H X h for a constant vector h."""
        h = np.asarray(h)
        return Affine(np.einsum("i,ijv,j->v", h.conj(), self.coef, h),
                      h.conj() @ self.const @ h)

    def flatten(self) -> "Affine":
        return Affine(self.coef.reshape(self.const.size, self.nvars), self.const.reshape(-1))

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.coef @ np.asarray(x)[: self.nvars] + self.const

    @staticmethod
    def concat(parts) -> "Affine":
        """Stack scalar/vector expressions into one vector expression."""
        parts = list(parts)
        n = max(p.nvars if isinstance(p, Affine) else 0 for p in parts)
        lifted = []
        for p in parts:
            p = Affine._lift(p, n)
            if p.const.ndim == 0:
                p = Affine(p.coef[None, :], p.const[None])
            else:
                p = p.flatten()
            lifted.append(p)
        dtype = np.result_type(*[p.coef.dtype for p in lifted])
        return Affine(np.concatenate([p.coef.astype(dtype) for p in lifted], axis=0),
                      np.concatenate([p.const.astype(dtype) for p in lifted]))

    @staticmethod
    def block(rows) -> "Affine":
        """Assemble a 2-D block matrix from nested lists of 2-D expressions."""
        n = max(e.nvars if isinstance(e, Affine) else 0 for row in rows for e in row)
        rows = [[Affine._lift(e, n) for e in row] for row in rows]
        dtype = np.result_type(*[e.coef.dtype for row in rows for e in row])
        coef = np.concatenate(
            [np.concatenate([e.coef.astype(dtype) for e in row], axis=1) for row in rows], axis=0)
        const = np.concatenate(
            [np.concatenate([e.const.astype(dtype) for e in row], axis=1) for row in rows], axis=0)
        return Affine(coef, const)


def as_affine(x) -> Affine:
    return x if isinstance(x, Affine) else Affine.constant(x)


def embed_hermitian_psd(m, tol: float = 1e-12) -> Affine:
    """Real symmetric 2n x 2n block [[Re M, -Im M], [Im M, Re M]] of a Hermitian expression.

    The block is PSD iff M is; every eigenvalue of M appears twice in it.
    """
    m = as_affine(m)
    if m.const.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix expression")
    scale = max(1.0, float(np.max(np.abs(m.coef), initial=0.0)), float(np.max(np.abs(m.const), initial=0.0)))
    skew_c = np.max(np.abs(m.const - m.const.conj().T), initial=0.0)
    skew_v = np.max(np.abs(m.coef - np.conj(np.swapaxes(m.coef, 0, 1))), initial=0.0)
    if max(skew_c, skew_v) > tol * scale:
        raise ValueError("matrix expression is not Hermitian")
    re, im = m.real, m.imag
    return Affine.block([[re, -im], [im, re]])


class ProgramBuilder:
    """Collects variables, cone constraints and a linear objective.

    Constraints are stated as "expression lies in cone"; :meth:`build` lowers
    them to the standard form ``A x + s = b, s in K`` with ``A = -G`` and
    ``b = g0`` for each block ``G x + g0``.
    """

    def __init__(self):
        self.names: list[str] = []
        self._blocks: list[tuple[ConeBlock, np.ndarray, np.ndarray, str]] = []
        self._objective: Affine | None = None

    @property
    def nvars(self) -> int:
        return len(self.names)

    def variables(self, count: int, label: str) -> Affine:
        start = self.nvars
        if count == 1:
            self.names.append(label)
        else:
            self.names.extend(f"{label}[{j}]" for j in range(count))
        coef = np.zeros((count, self.nvars))
        coef[np.arange(count), start + np.arange(count)] = 1.0
        return Affine(coef, np.zeros(count))

    def scalar(self, label: str) -> Affine:
        return self.variables(1, label)[0]

    def hermitian(self, n: int, label: str) -> Affine:
        """n x n complex Hermitian matrix variable with n^2 real parameters."""
        start = self.nvars
        coef = np.zeros((n, n, start + n * n), dtype=complex)
        k = start
        for j in range(n):
            self.names.append(f"{label}[{j},{j}]")
            coef[j, j, k] = 1.0
            k += 1
        for j in range(n):
            for i in range(j + 1, n):
                self.names.append(f"{label}[{i},{j}].re")
                coef[i, j, k] = 1.0
                coef[j, i, k] = 1.0
                self.names.append(f"{label}[{i},{j}].im")
                coef[i, j, k + 1] = 1.0j
                coef[j, i, k + 1] = -1.0j
                k += 2
        return Affine(coef, np.zeros((n, n), dtype=complex))

    def _add(self, kind: str, expr: Affine, size: int, tag: str):
        expr = as_affine(expr)
        if np.iscomplexobj(expr.coef) or np.iscomplexobj(expr.const):
            if np.max(np.abs(np.imag(expr.coef)), initial=0.0) > 1e-12 or \
                    np.max(np.abs(np.imag(expr.const)), initial=0.0) > 1e-12:
                raise ValueError("cone rows must be real")
            expr = expr.real
        flat = expr if expr.const.ndim == 1 else (expr.flatten() if expr.const.ndim else
                                                   Affine(expr.coef[None, :], expr.const[None]))
        self._blocks.append((ConeBlock(kind, size), flat.coef, flat.const, tag))

    def add_zero(self, expr, tag: str = ""):
        expr = as_affine(expr)
        self._add(ZERO, expr, max(1, expr.const.size), tag)

    def add_nonneg(self, expr, tag: str = ""):
        expr = as_affine(expr)
        self._add(NONNEG, expr, max(1, expr.const.size), tag)

    def add_soc(self, expr, tag: str = ""):
        """First entry bounds the Euclidean norm of the rest."""
        expr = as_affine(expr)
        self._add(SOC, expr, expr.const.size, tag)

    def add_psd(self, expr, tag: str = ""):
        """Real symmetric matrix expression constrained PSD (stored as svec)."""
        expr = as_affine(expr)
        n = expr.shape[0]
        sym = 0.5 * (expr + expr.T)
        rows = Affine(svec(np.moveaxis(sym.coef, -1, 0)).T, svec(sym.const))
        self._add(PSD, rows, n, tag)

    def add_hermitian_psd(self, expr, tag: str = ""):
        self.add_psd(embed_hermitian_psd(expr), tag)

    def minimize(self, expr):
        expr = as_affine(expr)
        if np.iscomplexobj(expr.const):
            expr = expr.real
        self._objective = expr

    def build(self) -> ConicProgram:
        n = self.nvars
        c = np.zeros(n)
        offset = 0.0
        if self._objective is not None:
            obj = self._objective.padded(n)
            c = np.asarray(obj.coef, dtype=float).reshape(n)
            offset = float(obj.const)
        blocks, a_parts, b_parts, tags = [], [], [], []
        for block, coef, const, tag in self._blocks:
            pad = n - coef.shape[1]
            if pad:
                coef = np.hstack([coef, np.zeros((coef.shape[0], pad))])
            blocks.append(block)
            a_parts.append(sp.csr_matrix(-coef))
            b_parts.append(const)
            tags.append(tag)
        if a_parts:
            a = sp.vstack(a_parts).tocsc()
            b = np.concatenate(b_parts).astype(float)
        else:
            a = sp.csc_matrix((0, n))
            b = np.zeros(0)
        a.eliminate_zeros()
        return ConicProgram(c=c, A=a, b=b, cone=ConeSpec(tuple(blocks)),
                            names=list(self.names), tags=tags, offset=offset)


__all__ = ["Affine", "as_affine", "embed_hermitian_psd", "ProgramBuilder", "tri_indices"]

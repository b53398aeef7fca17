"""Cone descriptions, scaled-triangular storage and Euclidean projections."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"
PSD = "psd"
KINDS = (ZERO, NONNEG, SOC, PSD)

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ConeBlock:
    kind: str
    size: int  # dimension for zero/nonneg/soc, matrix side for psd

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("cone block sizes must be >= 1")

    @property
    def dim(self) -> int:
        if self.kind == PSD:
            return self.size * (self.size + 1) // 2
        return self.size


@dataclass(frozen=True)
class ConeSpec:
    """Ordered product of cone blocks."""

    blocks: tuple[ConeBlock, ...] = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    def offsets(self) -> list[int]:
        out, pos = [], 0
        for b in self.blocks:
            out.append(pos)
            pos += b.dim
        return out

    def count(self, kind: str) -> int:
        return sum(1 for b in self.blocks if b.kind == kind)

    def rows(self, kind: str) -> int:
        return sum(b.dim for b in self.blocks if b.kind == kind)

    def describe(self) -> str:
        return " ".join(f"{b.kind}:{b.size}" for b in self.blocks)


@lru_cache(maxsize=None)
def tri_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row/column indices of the lower triangle (column-major) and svec weights."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    rows = np.array(rows)
    cols = np.array(cols)
    weights = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, weights


def svec(x: np.ndarray) -> np.ndarray:
    """Scaled lower-triangular vectorization; <svec X, svec Y> = tr(XY).

    Works on a trailing stack: shape (..., n, n) -> (..., n(n+1)/2).
    """
    n = x.shape[-1]
    r, c, w = tri_indices(n)
    return x[..., r, c] * w


def smat(v: np.ndarray, n: int) -> np.ndarray:
    r, c, w = tri_indices(n)
    out = np.zeros(v.shape[:-1] + (n, n), dtype=v.dtype)
    vals = v / w
    out[..., r, c] = vals
    out[..., c, r] = vals
    return out


def project_soc(v: np.ndarray) -> np.ndarray:
    t, x = v[0], v[1:]
    nx = float(np.linalg.norm(x))
    if nx <= t:
        return v.copy()
    if nx <= -t:
        return np.zeros_like(v)
    a = 0.5 * (t + nx)
    out = np.empty_like(v)
    out[0] = a
    out[1:] = (a / nx) * x
    return out


def project_psd_stack(vs: np.ndarray, n: int) -> np.ndarray:
    """Project a stack of svec'd symmetric matrices onto the PSD cone."""
    mats = smat(vs, n)
    w, q = np.linalg.eigh(mats)
    w = np.clip(w, 0.0, None)
    return svec((q * w[..., None, :]) @ np.swapaxes(q, -1, -2))


class Projector:
    """Precomputed projection onto a cone product (or its dual).

    Blocks of one kind are gathered so PSD blocks of equal side are
    eigendecomposed in one batched call.
    """

    def __init__(self, cone: ConeSpec, dual: bool = False):
        self.dim = cone.dim
        self.free = []
        self.zero = []
        self.nonneg = []
        self.soc = []
        psd: dict[int, list[np.ndarray]] = {}
        for block, off in zip(cone.blocks, cone.offsets()):
            idx = np.arange(off, off + block.dim)
            if block.kind == ZERO:
                (self.free if dual else self.zero).append(idx)
            elif block.kind == NONNEG:
                self.nonneg.append(idx)
            elif block.kind == SOC:
                self.soc.append(idx)
            else:
                psd.setdefault(block.size, []).append(idx)
        self.zero = np.concatenate(self.zero) if self.zero else np.zeros(0, dtype=int)
        self.nonneg = np.concatenate(self.nonneg) if self.nonneg else np.zeros(0, dtype=int)
        self.soc_groups = _group_soc(self.soc)
        self.psd = {n: np.stack(idxs) for n, idxs in psd.items()}

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        if self.zero.size:
            out[self.zero] = 0.0
        if self.nonneg.size:
            out[self.nonneg] = np.maximum(v[self.nonneg], 0.0)
        for idx in self.soc_groups:
            out[idx] = _project_soc_stack(v[idx])
        for n, idx in self.psd.items():
            out[idx] = project_psd_stack(v[idx], n)
        return out


def _group_soc(blocks: list[np.ndarray]) -> list[np.ndarray]:
    by_size: dict[int, list[np.ndarray]] = {}
    for idx in blocks:
        by_size.setdefault(idx.size, []).append(idx)
    return [np.stack(v) for v in by_size.values()]


def _project_soc_stack(v: np.ndarray) -> np.ndarray:
    t = v[:, 0]
    x = v[:, 1:]
    nx = np.linalg.norm(x, axis=1)
    out = v.copy()
    inside = nx <= t
    polar = nx <= -t
    mid = ~(inside | polar)
    out[polar] = 0.0
    if np.any(mid):
        a = 0.5 * (t[mid] + nx[mid])
        out[mid, 0] = a
        out[mid, 1:] = (a / nx[mid])[:, None] * x[mid]
    return out


def cone_violation(v: np.ndarray, cone: ConeSpec) -> float:
    """Euclidean distance from v to the cone."""
    return float(np.linalg.norm(v - Projector(cone)(v)))

"""Standard-form conic programs and their plain-text dump format.

A program is ``minimize c^T x  s.t.  A x + s = b,  s in K`` where K is a
product of zero, nonnegative, second-order and PSD cones (PSD blocks in
scaled lower-triangular storage, column-major, off-diagonals times sqrt 2).

Dump format (one record per line, whitespace separated, '#' starts a comment)::

    CONIC 1
    dims <n> <m> <nnz>
    cone <kind> <size>          # one line per block, in order
    c <j> <value>               # nonzero objective entries
    b <i> <value>               # nonzero right-hand-side entries
    A <i> <j> <value>           # nonzero constraint entries
    offset <value>              # optional constant added to the objective

Values are written with 17 significant digits so a load reproduces the
program bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .cones import KINDS, ConeBlock, ConeSpec


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cone: ConeSpec
    names: list[str] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.A = sp.csc_matrix(self.A, dtype=float)
        if not self.names:
            self.names = [f"x{j}" for j in range(self.n)]
        self.check()

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def check(self):
        if self.A.shape != (self.m, self.n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.m, self.n)}")
        if self.cone.dim != self.m:
            raise ValueError(f"cone dimension {self.cone.dim} does not match {self.m} rows")
        if len(self.names) != self.n or len(set(self.names)) != self.n:
            raise ValueError("variable name table must cover every variable exactly once")

    def summary(self) -> dict:
        return {
            "variables": self.n,
            "rows": self.m,
            "nnz": int(self.A.nnz),
            **{f"{k}_blocks": self.cone.count(k) for k in KINDS},
            **{f"{k}_rows": self.cone.rows(k) for k in KINDS},
        }

    # -- text dump ----------------------------------------------------------------
    def dumps(self) -> str:
        coo = self.A.tocoo()
        lines = ["CONIC 1", f"dims {self.n} {self.m} {coo.nnz}"]
        lines += [f"cone {blk.kind} {blk.size}" for blk in self.cone.blocks]
        lines += [f"c {j} {v:.17g}" for j, v in enumerate(self.c) if v != 0.0]
        lines += [f"b {i} {v:.17g}" for i, v in enumerate(self.b) if v != 0.0]
        order = np.lexsort((coo.col, coo.row))
        lines += [f"A {coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}" for k in order]
        if self.offset:
            lines.append(f"offset {self.offset:.17g}")
        return "\n".join(lines) + "\n"

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "ConicProgram":
        n = m = None
        blocks, c_ent, b_ent, a_ent = [], [], [], []
        offset = 0.0
        lines = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines or lines[0] != ["CONIC", "1"]:
            raise ValueError("not a conic program dump (missing 'CONIC 1' header)")
        for tok in lines[1:]:
            key = tok[0]
            if key == "dims":
                n, m = int(tok[1]), int(tok[2])
            elif key == "cone":
                blocks.append(ConeBlock(tok[1], int(tok[2])))
            elif key == "c":
                c_ent.append((int(tok[1]), float(tok[2])))
            elif key == "b":
                b_ent.append((int(tok[1]), float(tok[2])))
            elif key == "A":
                a_ent.append((int(tok[1]), int(tok[2]), float(tok[3])))
            elif key == "offset":
                offset = float(tok[1])
            else:
                raise ValueError(f"unknown record {key!r}")
        if n is None:
            raise ValueError("missing dims record")
        c = np.zeros(n)
        for j, v in c_ent:
            c[j] = v
        b = np.zeros(m)
        for i, v in b_ent:
            b[i] = v
        if a_ent:
            r, cc, v = zip(*a_ent)
            a = sp.csc_matrix((v, (r, cc)), shape=(m, n))
        else:
            a = sp.csc_matrix((m, n))
        return cls(c=c, A=a, b=b, cone=ConeSpec(tuple(blocks)), offset=offset)

    @classmethod
    def load(cls, path) -> "ConicProgram":
        return cls.loads(Path(path).read_text())

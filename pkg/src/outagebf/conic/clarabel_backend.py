"""Optional interior-point backend through the ``clarabel`` package.

Used for cross-checking the bundled solver; registered only when the
package imports.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp

from .admm import (
    DUAL_INFEASIBLE,
    MAX_ITERS,
    NUMERICAL_FAILURE,
    OPTIMAL,
    PRIMAL_INFEASIBLE,
    ConicSolution,
    SolverOptions,
    residuals,
)
from .cones import NONNEG, PSD, SOC, ZERO, tri_indices
from .program import ConicProgram

try:
    import clarabel
except ImportError:  # pragma: no cover - optional dependency
    clarabel = None


def _psd_permutation(n: int) -> np.ndarray:
    """Our lower column-major order -> clarabel upper column-major order."""
    r, c, _ = tri_indices(n)
    pos = {(i, j): k for k, (i, j) in enumerate(zip(r, c))}
    perm = []
    for j in range(n):
        for i in range(j + 1):
            perm.append(pos[(j, i)])
    return np.array(perm)


class ClarabelSolver:
    name = "clarabel"

    def __init__(self, options: SolverOptions | None = None):
        if clarabel is None:
            raise RuntimeError("clarabel is not installed")
        self.options = options or SolverOptions()

    def solve(self, p: ConicProgram) -> ConicSolution:
        t0 = time.perf_counter()
        perm = np.arange(p.m)
        cones = []
        for blk, off in zip(p.cone.blocks, p.cone.offsets()):
            if blk.kind == ZERO:
                cones.append(clarabel.ZeroConeT(blk.size))
            elif blk.kind == NONNEG:
                cones.append(clarabel.NonnegativeConeT(blk.size))
            elif blk.kind == SOC:
                cones.append(clarabel.SecondOrderConeT(blk.size))
            elif blk.kind == PSD:
                cones.append(clarabel.PSDTriangleConeT(blk.size))
                perm[off:off + blk.dim] = off + _psd_permutation(blk.size)
        a = p.A.tocsr()[perm].tocsc()
        b = p.b[perm]
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = self.options.tol
        settings.max_iter = min(self.options.max_iters, 500)
        solver = clarabel.DefaultSolver(sp.csc_matrix((p.n, p.n)), p.c, a, b, cones, settings)
        out = solver.solve()
        inv = np.empty_like(perm)
        inv[perm] = np.arange(p.m)
        x = np.array(out.x)
        y = np.array(out.z)[inv]
        s = np.array(out.s)[inv]
        status = {
            "Solved": OPTIMAL,
            "AlmostSolved": OPTIMAL,
            "PrimalInfeasible": PRIMAL_INFEASIBLE,
            "AlmostPrimalInfeasible": PRIMAL_INFEASIBLE,
            "DualInfeasible": DUAL_INFEASIBLE,
            "AlmostDualInfeasible": DUAL_INFEASIBLE,
            "MaxIterations": MAX_ITERS,
        }.get(str(out.status), NUMERICAL_FAILURE)
        obj = float(p.c @ x + p.offset) if status == OPTIMAL else (
            np.inf if status == PRIMAL_INFEASIBLE else np.nan)
        sol = ConicSolution(x=x, y=y, s=s, status=status, objective=obj,
                            iterations=int(out.iterations), solve_time=time.perf_counter() - t0,
                            info={"backend_status": str(out.status)})
        sol.primal_residual, sol.dual_residual, sol.gap = residuals(p, sol)
        return sol


if clarabel is not None:
    from . import register_backend

    register_backend("clarabel", ClarabelSolver)

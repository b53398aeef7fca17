"""Operator-splitting conic solver on the homogeneous self-dual embedding.

The embedding looks for ``u = (x, y, tau)`` in ``R^n x K* x R+`` and
``v = (0, s, kappa)`` in ``{0} x K x R+`` with ``v = Q u`` where::

        [  0   A^T   c ]
    Q = [ -A    0    b ]
        [ -c^T -b^T  0 ]

Douglas-Rachford splitting alternates a solve with ``M + Q`` (M a diagonal
metric) and a projection onto the cone, with Anderson acceleration on the
fixed-point iteration. A solution with ``tau > 0`` gives the primal-dual
optimum; ``tau -> 0`` gives an infeasibility certificate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .cones import NONNEG, PSD, SOC, ZERO, ConeSpec, Projector
from .program import ConicProgram

OPTIMAL = "Optimal"
PRIMAL_INFEASIBLE = "PrimalInfeasible"
DUAL_INFEASIBLE = "DualInfeasible"
MAX_ITERS = "MaxIters"
NUMERICAL_FAILURE = "NumericalFailure"
STATUSES = (OPTIMAL, PRIMAL_INFEASIBLE, DUAL_INFEASIBLE, MAX_ITERS, NUMERICAL_FAILURE)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-7
    max_iters: int = 50_000
    eps_infeas: float = 1e-6
    relaxation: float = 1.5
    rho_x: float = 1e-3
    rho_y: float = 1.0
    scale: float = 1.0
    anderson_memory: int = 10
    check_every: int = 10
    equilibrate_iters: int = 25
    time_limit: float | None = None


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    objective: float
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan
    iterations: int = 0
    solve_time: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def residuals(self) -> tuple[float, float, float]:
        return self.primal_residual, self.dual_residual, self.gap


def residuals(p: ConicProgram, sol: ConicSolution) -> tuple[float, float, float]:
    """Recompute (||Ax + s - b||, ||A^T y + c||, |c^T x + b^T y|) from scratch."""
    x, y, s = sol.x, sol.y, sol.s
    if x.shape != (p.n,) or y.shape != (p.m,) or s.shape != (p.m,):
        raise ValueError("solution shapes do not match the program")
    pres = float(np.linalg.norm(p.A @ x + s - p.b))
    dres = float(np.linalg.norm(p.A.T @ y + p.c))
    gap = float(abs(p.c @ x + p.b @ y))
    return pres, dres, gap


def _relative(p: ConicProgram, x, y, s):
    ax = p.A @ x
    aty = p.A.T @ y
    cx, by = float(p.c @ x), float(p.b @ y)
    pres = np.linalg.norm(ax + s - p.b) / (1.0 + max(np.linalg.norm(p.b), np.linalg.norm(ax), np.linalg.norm(s)))
    dres = np.linalg.norm(aty + p.c) / (1.0 + max(np.linalg.norm(p.c), np.linalg.norm(aty)))
    gap = abs(cx + by) / (1.0 + max(abs(cx), abs(by)))
    return float(pres), float(dres), float(gap)


def _equilibrate(a: np.ndarray, cone: ConeSpec, iters: int):
    """Ruiz scaling D A E; rows of one SOC/PSD block share a factor."""
    m, n = a.shape
    d = np.ones(m)
    e = np.ones(n)
    groups = [np.arange(off, off + blk.dim) for blk, off in zip(cone.blocks, cone.offsets())
              if blk.kind in (SOC, PSD)]
    work = a.copy()
    for _ in range(iters):
        rn = np.max(np.abs(work), axis=1) if n else np.zeros(m)
        cn = np.max(np.abs(work), axis=0) if m else np.zeros(n)
        for g in groups:
            rn[g] = rn[g].max()
        rn = np.where(rn < 1e-8, 1.0, rn)
        cn = np.where(cn < 1e-8, 1.0, cn)
        d = np.clip(d / np.sqrt(rn), 1e-4, 1e4)
        e = np.clip(e / np.sqrt(cn), 1e-4, 1e4)
        work = d[:, None] * a * e[None, :]
    return work, d, e


class AdmmSolver:
    """Reference backend. Dense linear algebra: meant for programs up to ~10^3 variables."""

    name = "admm"

    def __init__(self, options: SolverOptions | None = None):
        self.options = options or SolverOptions()

    def solve(self, p: ConicProgram) -> ConicSolution:
        p.check()
        opts = self.options
        t0 = time.perf_counter()
        n, m = p.n, p.m
        if m == 0:
            return self._unconstrained(p, t0)

        a_s, d, e = _equilibrate(p.A.toarray(), p.cone, opts.equilibrate_iters)
        b_s = d * p.b
        c_s = e * p.c
        col = np.mean(np.linalg.norm(a_s, axis=0)) if n else 1.0
        row = np.mean(np.linalg.norm(a_s, axis=1))
        sig_b = opts.scale * col / max(np.linalg.norm(b_s), 1e-6)
        sig_c = opts.scale * row / max(np.linalg.norm(c_s), 1e-6)
        b_s = b_s * sig_b
        c_s = c_s * sig_c

        rho = opts.rho_x
        rho_y = opts.rho_y
        chol = sla.cho_factor(rho * np.eye(n) + a_s.T @ a_s / rho_y)

        def ksolve(r1, r2):
            x = sla.cho_solve(chol, r1 - a_s.T @ r2 / rho_y)
            return x, (r2 + a_s @ x) / rho_y

        gx, gy = ksolve(c_s, b_s)
        h_dot_g = float(c_s @ gx + b_s @ gy)

        proj = Projector(p.cone, dual=True)
        mdiag = np.concatenate([np.full(n, rho), np.full(m, rho_y), [1.0]])
        lam = opts.relaxation

        def step(z):
            w = mdiag * z
            ax, ay = ksolve(w[:n], w[n:n + m])
            tau = (w[-1] + c_s @ ax + b_s @ ay) / (1.0 + h_dot_g)
            ut = np.concatenate([ax - tau * gx, ay - tau * gy, [tau]])
            w2 = 2.0 * ut - z
            u = w2.copy()
            u[n:n + m] = proj(w2[n:n + m])
            u[-1] = max(w2[-1], 0.0)
            return ut, u, w2

        z = np.zeros(n + m + 1)
        z[-1] = 1.0
        mem = opts.anderson_memory
        s_hist: list[np.ndarray] = []
        y_hist: list[np.ndarray] = []
        prev_z = prev_g = prev_tz = None
        best_res = np.inf
        status = MAX_ITERS
        it = 0
        u = v = None
        res = (np.nan, np.nan, np.nan)
        cert = None
        accelerated = False
        for it in range(1, opts.max_iters + 1):
            ut, u, w2 = step(z)
            g = lam * (ut - u)  # z - T(z)
            tz = z - g
            gnorm = float(np.linalg.norm(g))
            if not np.isfinite(gnorm):
                status = NUMERICAL_FAILURE
                break
            if prev_g is not None and mem and gnorm > 2.0 * np.linalg.norm(prev_g) and accelerated:
                # safeguard: the extrapolated point got worse, fall back to the plain step
                z = prev_tz
                s_hist.clear()
                y_hist.clear()
                prev_z = prev_g = prev_tz = None
                accelerated = False
                continue
            if prev_g is not None and mem:
                s_hist.append(z - prev_z)
                y_hist.append(g - prev_g)
                if len(s_hist) > mem:
                    s_hist.pop(0)
                    y_hist.pop(0)
            prev_z, prev_g, prev_tz = z, g, tz
            accelerated = False
            if mem and len(y_hist) >= 1:
                ymat = np.stack(y_hist, axis=1)
                smat_ = np.stack(s_hist, axis=1)
                gram = ymat.T @ ymat
                reg = 1e-10 * (np.trace(gram) + 1e-30)
                try:
                    gamma = np.linalg.solve(gram + reg * np.eye(gram.shape[0]), ymat.T @ g)
                    z_new = tz - (smat_ - ymat) @ gamma
                    if np.all(np.isfinite(z_new)):
                        z = z_new
                        accelerated = True
                    else:
                        z = tz
                except np.linalg.LinAlgError:
                    z = tz
            else:
                z = tz
            # T is positively homogeneous, so rescaling z changes nothing but
            # keeps the iterate away from the trivial fixed point 0
            zn = float(np.linalg.norm(z))
            if zn > 0 and not 1e-3 <= zn <= 1e3:
                z = z / zn
                s_hist = [v_ / zn for v_ in s_hist]
                y_hist = [v_ / zn for v_ in y_hist]
                prev_z, prev_g, prev_tz = prev_z / zn, prev_g / zn, prev_tz / zn

            if it % opts.check_every == 0 or it == opts.max_iters:
                v = mdiag * (u - w2)
                tau = u[-1]
                kappa = v[-1]
                xs, ys, ss = u[:n], u[n:n + m], v[n:n + m]
                x_dir = e * xs
                y_dir = d * ys
                s_dir = ss / d
                if tau > 1e-10 * np.linalg.norm(u):
                    x = x_dir / (sig_b * tau)
                    y = y_dir / (sig_c * tau)
                    s = s_dir / (sig_b * tau)
                    res = _relative(p, x, y, s)
                    if max(res) <= opts.tol:
                        status = OPTIMAL
                        break
                cert = self._certificate(p, x_dir, y_dir, s_dir, opts.eps_infeas)
                if cert is not None:
                    status = cert[0]
                    break
                if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
                    break
        elapsed = time.perf_counter() - t0

        if status in (PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
            _, x, y, s, cres = cert
            sol = ConicSolution(x=x, y=y, s=s, status=status,
                                objective=np.inf if status == PRIMAL_INFEASIBLE else -np.inf,
                                iterations=it, solve_time=elapsed,
                                info={"certificate_residual": cres})
            return sol
        if u is None or not np.all(np.isfinite(u)):
            zeros = np.zeros(n), np.zeros(m), np.zeros(m)
            return ConicSolution(*zeros, status=NUMERICAL_FAILURE, objective=np.nan,
                                 iterations=it, solve_time=elapsed)
        v = mdiag * (u - w2)
        tau = max(u[-1], 1e-300)
        # with tau collapsed (no certificate yet) the rescaled point can overflow;
        # it is returned for inspection only, under a non-optimal status
        with np.errstate(over="ignore", invalid="ignore"):
            x = e * u[:n] / (sig_b * tau)
            y = d * u[n:n + m] / (sig_c * tau)
            s = v[n:n + m] / d / (sig_b * tau)
            sol = ConicSolution(x=x, y=y, s=s, status=status, objective=float(p.c @ x + p.offset),
                                iterations=it, solve_time=elapsed,
                                info={"tau": float(u[-1]), "kappa": float(v[-1]),
                                      "relative_residuals": _relative(p, x, y, s)})
            sol.primal_residual, sol.dual_residual, sol.gap = residuals(p, sol)
        return sol

    @staticmethod
    def _certificate(p, x_dir, y_dir, s_dir, eps):
        """Infeasibility test on the normalized ray.

        The residual is divided by the ray's norm: a y with b^T y = -1 and
        ||A^T y|| = r certifies exact infeasibility for a data matrix within
        r / ||y|| of A, so this is a backward error.
        """
        by = float(p.b @ y_dir)
        if by < 0:
            y = y_dir / -by
            r = float(np.linalg.norm(p.A.T @ y)) / max(1.0, float(np.linalg.norm(y)))
            if r < eps:
                return (PRIMAL_INFEASIBLE, np.zeros(p.n), y, np.zeros(p.m), r)
        cx = float(p.c @ x_dir)
        if cx < 0:
            x = x_dir / -cx
            s = s_dir / -cx
            r = float(np.linalg.norm(p.A @ x + s)) / max(1.0, float(np.linalg.norm(x)))
            if r < eps:
                return (DUAL_INFEASIBLE, x, np.zeros(p.m), s, r)
        return None

    @staticmethod
    def _unconstrained(p, t0):
        n = p.n
        if not np.any(p.c):
            sol = ConicSolution(np.zeros(n), np.zeros(0), np.zeros(0), OPTIMAL, p.offset,
                                solve_time=time.perf_counter() - t0)
            sol.primal_residual, sol.dual_residual, sol.gap = 0.0, 0.0, 0.0
            return sol
        x = -p.c / float(p.c @ p.c)
        return ConicSolution(x, np.zeros(0), np.zeros(0), DUAL_INFEASIBLE, -np.inf,
                             solve_time=time.perf_counter() - t0,
                             info={"certificate_residual": 0.0})

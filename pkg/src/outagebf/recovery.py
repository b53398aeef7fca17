"""From relaxed matrix solutions to beamforming vectors.

Rank-one solutions are decomposed directly. Otherwise Gaussian
randomization draws candidate directions from CN(0, W_i), re-solves the
restricted problem for the powers along those directions, and keeps the
cheapest feasible round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicSolution, SolverOptions, solve
from .conic.admm import OPTIMAL, PRIMAL_INFEASIBLE
from .model import BeamformerSet, BeamformingInstance, complex_normal, stream
from .numerics import hermitian_eig
from .restriction import Method, apply_method, build_power_program, build_rar

RANK_ONE_THRESHOLD = 0.99
DEFAULT_ROUNDS = 100
MAX_REDRAWS = 10


@dataclass
class RarSolution:
    ws: list[np.ndarray]
    objective: float
    status: str
    rank_ratios: np.ndarray
    method: Method | None = None
    conic: ConicSolution | None = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status == OPTIMAL


def rank_ratio(w: np.ndarray) -> float:
    """lambda_max / trace; an all-zero matrix counts as rank one."""
    lam = hermitian_eig(0.5 * (w + w.conj().T)).eigenvalues
    lam = np.clip(lam, 0.0, None)
    tr = float(lam.sum())
    if tr <= 0.0:
        return 1.0
    return float(lam[-1] / tr)


def solve_rar(inst: BeamformingInstance, method: Method, options: SolverOptions | None = None,
              backend: str = "admm") -> RarSolution:
    prog = build_rar(inst, method)
    sol = solve(prog.build(), options, backend)
    if sol.status != OPTIMAL:
        return RarSolution([], math.inf, sol.status, np.array([]), method, sol)
    ws = prog.w_values(sol.x)
    ratios = np.array([rank_ratio(w) for w in ws])
    return RarSolution(ws, float(sum(np.trace(w).real for w in ws)), sol.status, ratios, method, sol)


def rank_one_check(sol: RarSolution, threshold: float = RANK_ONE_THRESHOLD) -> tuple[bool, np.ndarray]:
    ratios = np.array([rank_ratio(w) for w in sol.ws])
    return bool(np.all(ratios >= threshold)), ratios


def _phase_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-14 * max(1.0, np.abs(v).max(initial=0.0)))
    if nz.size == 0:
        return v
    a = v[nz[0]]
    return v * (abs(a) / a)


def extract_beamformers(sol: RarSolution, threshold: float = RANK_ONE_THRESHOLD) -> BeamformerSet:
    """w_i = sqrt(lambda_max) u_max with the first nonzero entry real positive."""
    ok, ratios = rank_one_check(sol, threshold)
    if not ok:
        raise ValueError(f"solution is not rank one (ratios {np.round(ratios, 4)}); use gaussian_randomization")
    out = []
    for w in sol.ws:
        dec = hermitian_eig(0.5 * (w + w.conj().T))
        lam = max(float(dec.eigenvalues[-1]), 0.0)
        out.append(_phase_fix(math.sqrt(lam) * dec.eigenvectors[:, -1]))
    return BeamformerSet(np.array(out))


@dataclass
class PowerResult:
    powers: np.ndarray | None
    status: str
    solution: ConicSolution | None = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.powers is not None


def power_allocation(directions: np.ndarray, inst: BeamformingInstance, method: Method,
                     options: SolverOptions | None = None, backend: str = "admm") -> PowerResult:
    """Minimize sum p_i subject to the method's constraints at W_i = p_i u_i u_i^H."""
    u = np.atleast_2d(np.asarray(directions, dtype=complex))
    norms = np.linalg.norm(u, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-8):
        raise ValueError("directions must have unit norm")
    prog = apply_method(build_power_program(inst, u), method)
    sol = solve(prog.build(), options, backend)
    if sol.status != OPTIMAL:
        return PowerResult(None, sol.status, sol)
    return PowerResult(np.clip(prog.powers.value(sol.x), 0.0, None), sol.status, sol)


def beamformers_from_powers(directions: np.ndarray, powers: np.ndarray) -> BeamformerSet:
    return BeamformerSet(np.sqrt(np.asarray(powers))[:, None] * np.asarray(directions))


@dataclass
class RandomizationResult:
    beamformers: BeamformerSet | None
    objective: float
    best_round: int | None
    objectives: np.ndarray  # per round, inf when infeasible or skipped

    @property
    def feasible(self) -> bool:
        return self.beamformers is not None


def _psd_factor(w: np.ndarray) -> np.ndarray:
    dec = hermitian_eig(0.5 * (w + w.conj().T))
    return dec.eigenvectors * np.sqrt(np.clip(dec.eigenvalues, 0.0, None))


def draw_directions(factors: list[np.ndarray], rng: np.random.Generator) -> np.ndarray | None:
    """One candidate direction per user from CN(0, W_i); None if a draw keeps degenerating."""
    out = []
    for f in factors:
        scale = max(np.linalg.norm(f), 1e-300)
        for _ in range(MAX_REDRAWS):
            w = f @ complex_normal(rng, f.shape[1])
            nrm = np.linalg.norm(w)
            if nrm > 1e-12 * scale:
                out.append(w / nrm)
                break
        else:
            return None
    return np.array(out)


def gaussian_randomization(sol: RarSolution, inst: BeamformingInstance, method: Method,
                           rounds: int = DEFAULT_ROUNDS, seed: int = 0, keys: tuple = (),
                           options: SolverOptions | None = None, backend: str = "admm") -> RandomizationResult:
    """Keep the feasible round with least total power; ties go to the earliest round.

    Round l draws from its own stream (seed, *keys, l), so a run with more
    rounds only adds candidates.
    """
    if rounds < 1:
        raise ValueError("need at least one randomization round")
    if not sol.ws:
        raise ValueError("randomization needs a feasible relaxed solution")
    factors = [_psd_factor(w) for w in sol.ws]
    objectives = np.full(rounds, np.inf)
    best = None
    for l in range(rounds):
        u = draw_directions(factors, stream(seed, *keys, l))
        if u is None:
            continue
        res = power_allocation(u, inst, method, options, backend)
        if not res.feasible:
            continue
        objectives[l] = float(res.powers.sum())
        if best is None or objectives[l] < objectives[best[0]]:
            best = (l, u, res.powers)
    if best is None:
        return RandomizationResult(None, math.inf, None, objectives)
    l, u, p = best
    return RandomizationResult(beamformers_from_powers(u, p), float(objectives[l]), l, objectives)


__all__ = [
    "RarSolution", "rank_ratio", "solve_rar", "rank_one_check", "extract_beamformers",
    "PowerResult", "power_allocation", "beamformers_from_powers", "RandomizationResult",
    "draw_directions", "gaussian_randomization", "RANK_ONE_THRESHOLD", "DEFAULT_ROUNDS",
    "PRIMAL_INFEASIBLE",
]

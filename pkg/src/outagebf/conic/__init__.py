"""Conic programs, complex PSD embedding and the bundled solver."""

from __future__ import annotations

from .admm import (
    DUAL_INFEASIBLE,
    MAX_ITERS,
    NUMERICAL_FAILURE,
    OPTIMAL,
    PRIMAL_INFEASIBLE,
    STATUSES,
    AdmmSolver,
    ConicSolution,
    SolverOptions,
    residuals,
)
from .cones import ConeBlock, ConeSpec, Projector, smat, svec
from .expr import Affine, ProgramBuilder, as_affine, embed_hermitian_psd
from .program import ConicProgram

_BACKENDS = {"admm": AdmmSolver}


def register_backend(name: str, factory) -> None:
    """Register a backend: ``factory(options)`` must return an object with
    ``solve(ConicProgram) -> ConicSolution``."""
    _BACKENDS[name] = factory


def backends() -> list[str]:
    return sorted(_BACKENDS)


def solve(p: ConicProgram, options: SolverOptions | None = None, backend: str = "admm") -> ConicSolution:
    try:
        factory = _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}; available: {backends()}") from None
    return factory(options).solve(p)


from . import clarabel_backend as _clarabel  # noqa: E402  (registers itself when clarabel imports)

__all__ = [
    "Affine", "AdmmSolver", "ConeBlock", "ConeSpec", "ConicProgram", "ConicSolution",
    "ProgramBuilder", "Projector", "SolverOptions", "as_affine", "backends",
    "embed_hermitian_psd", "register_backend", "residuals", "smat", "solve", "svec",
    "OPTIMAL", "PRIMAL_INFEASIBLE", "DUAL_INFEASIBLE", "MAX_ITERS", "NUMERICAL_FAILURE", "STATUSES",
]

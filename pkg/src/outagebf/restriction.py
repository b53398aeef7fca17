"""Relaxed beamforming programs and conservative outage constraints.

Each user's outage constraint is written through the triple (Q, r, s) of the
quadratic ``e^H Q e + 2 Re{e^H r} + s >= 0`` in a standardized error e, with
Q, r, s affine in the beamforming matrices W_1..W_K. The four restrictions:

* ``sphere``           LMI from the S-lemma over a ball of radius d
* ``bernstein``        Bernstein-type tail bound (SOC + LMI)
* ``decomp_gaussian``  moment bound on independent parts (SOC only)
* ``decomp_bounded``   same idea for i.i.d. bounded real errors, with
                       anti-diagonal coloring of the matrix entries

plus ``nonrobust`` which treats the presumed channels as exact.

The builders accept any affine W expressions, so the same code states the
relaxed program (W Hermitian variables) and the power allocation step of
randomization (W_i = p_i u_i u_i^H).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .conic import Affine, ConicProgram, ProgramBuilder
from .model import BeamformingInstance, GaussianCov, UniformIID
from .numerics import DomainError, chi2_inv_cdf, hermitian_eig, solve_theta_bar

SPHERE = "sphere"
BERNSTEIN = "bernstein"
DECOMP_GAUSSIAN = "decomp_gaussian"
DECOMP_BOUNDED = "decomp_bounded"
NONROBUST = "nonrobust"
METHODS = (SPHERE, BERNSTEIN, DECOMP_GAUSSIAN, DECOMP_BOUNDED, NONROBUST)
ROBUST_METHODS = METHODS[:4]

_ALIASES = {
    "1": SPHERE, "i": SPHERE, "method1": SPHERE, "sphere": SPHERE, "sphere-bounding": SPHERE,
    "2": BERNSTEIN, "ii": BERNSTEIN, "method2": BERNSTEIN, "bernstein": BERNSTEIN,
    "3": DECOMP_GAUSSIAN, "iii": DECOMP_GAUSSIAN, "method3": DECOMP_GAUSSIAN,
    "decomp-gaussian": DECOMP_GAUSSIAN, "decomp_gaussian": DECOMP_GAUSSIAN,
    "4": DECOMP_BOUNDED, "iv": DECOMP_BOUNDED, "method4": DECOMP_BOUNDED,
    "decomp-bounded": DECOMP_BOUNDED, "decomp_bounded": DECOMP_BOUNDED,
    "nonrobust": NONROBUST, "non-robust": NONROBUST, "perfect-csi": NONROBUST,
}

LABELS = {SPHERE: "Method I", BERNSTEIN: "Method II", DECOMP_GAUSSIAN: "Method III",
          DECOMP_BOUNDED: "Method IV", NONROBUST: "Non-robust"}


@dataclass(frozen=True)
class Method:
    """Restriction choice plus the optional conservatism override.

    ``radius`` replaces the sphere radius d (sphere method only); ``rho``
    replaces the outage cap used to build the constraints of the other
    robust methods. Validation always uses the instance's own caps.
    """

    kind: str
    radius: float | None = None
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ValueError(f"unknown method {self.kind!r}")
        if self.radius is not None:
            if self.kind != SPHERE:
                raise ValueError("a radius override only applies to the sphere method")
            if not self.radius >= 0:
                raise ValueError("radius override must be nonnegative")
        if self.rho is not None:
            if self.kind in (SPHERE, NONROBUST):
                raise ValueError("a rho override only applies to methods II-IV")
            if not 0.0 < self.rho < 1.0:
                raise ValueError("rho override must lie in (0, 1)")

    @classmethod
    def parse(cls, name: str) -> "Method":
        try:
            return cls(_ALIASES[name.strip().lower()])
        except KeyError:
            raise ValueError(f"unknown method {name!r}; choose from {sorted(set(_ALIASES))}") from None

    @property
    def label(self) -> str:
        return LABELS[self.kind]

    @property
    def robust(self) -> bool:
        return self.kind != NONROBUST

    @property
    def needs_gaussian(self) -> bool:
        return self.kind in (SPHERE, BERNSTEIN, DECOMP_GAUSSIAN)


@dataclass
class QrsData:
    Q: np.ndarray
    r: np.ndarray
    s: float
    rho: float


# -- constants -----------------------------------------------------------------------------

def sphere_radius(n: int, rho: float) -> float:
    """d with Prob{||e|| <= d} = 1 - rho for e ~ CN(0, I_n)."""
    if not 0.0 < rho <= 1.0:
        raise DomainError("rho must lie in (0, 1]")
    if rho == 1.0:
        return 0.0
    return math.sqrt(chi2_inv_cdf(2 * n, 1.0 - rho) / 2.0)


def decomposition_constants(rho: float) -> tuple[float, float, float]:
    """(theta_bar, v, mu) for the Gaussian decomposition bound."""
    if not 0.0 < rho < 1.0:
        raise DomainError("rho must lie in (0, 1) for the decomposition method")
    theta = solve_theta_bar(rho)
    v = math.sqrt(-math.log(rho)) / theta
    mu = 2.0 * math.sqrt(-math.log(rho))
    return theta, v, mu


def coloring_sets(n: int) -> list[list[tuple[int, int]]]:
    """Partition of {0..n-1}^2 into n anti-diagonal bands, (j + k) mod n = l."""
    sets: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for j in range(n):
        for k in range(n):
            sets[(j + k) % n].append((j, k))
    return sets


# Band weights for errors uniform on [-sqrt3, sqrt3] (unit variance). A band
# term must satisfy ln E exp(u X) <= u^2 t^2 for every real u. The smallest
# constants, found by quadrature and rounded up:
#   diagonal   X = Q_jj (e^2 - 1):   sup ln E exp(l (e^2 - 1)) / l^2   = 0.440387
#   off-diag   X = 2 Q_jk e_j e_k:   sup 2 ln E exp(l e_j e_k) / l^2   = 1.011429
# (each off-diagonal pair appears twice in its band). The weights 1/sqrt8 and
# 1 belong to errors on [-1, 1]; on the unit-variance scale they undercount
# the diagonal variance 4/5 and are unsafe when Q's diagonal dominates.
DIAGONAL_WEIGHT = 0.66362
OFF_DIAGONAL_WEIGHT = 1.00570
UNIT_SUPPORT_WEIGHTS = (1.0 / math.sqrt(8.0), 1.0)


def coloring_weight(j: int, k: int, weights: tuple[float, float] = (DIAGONAL_WEIGHT, OFF_DIAGONAL_WEIGHT)) -> float:
    return weights[0] if j == k else weights[1]


# -- (Q, r, s) maps -----------------------------------------------------------------------

def interference_matrix(ws: Sequence, inst: BeamformingInstance, i: int):
    """W_i / gamma_i - sum_{k != i} W_k (numeric or affine)."""
    z = ws[i] * (1.0 / inst.sinr_targets[i])
    for k, wk in enumerate(ws):
        if k != i:
            z = z - wk
    return z


def _factor(inst: BeamformingInstance, i: int) -> np.ndarray:
    if not isinstance(inst.error_model, GaussianCov):
        raise DomainError("this restriction needs a Gaussian error model")
    return inst.error_model.factors[i]


def _epsilon(inst: BeamformingInstance, i: int) -> float:
    if not isinstance(inst.error_model, UniformIID):
        raise DomainError("this restriction needs the uniform bounded error model")
    return inst.error_model.epsilons[i]


def qrs_gaussian(inst: BeamformingInstance, ws: Sequence, i: int):
    """Q = F^H Z F, r = F^H Z h, s = h^H Z h - sigma^2 with F F^H = C_i."""
    f = _factor(inst, i)
    h = inst.channels[i]
    z = interference_matrix(ws, inst, i)
    fh = f.conj().T
    q = fh @ z @ f
    r = fh @ (z @ h)
    s = _quad(z, h) - inst.noise_powers[i]
    return q, r, s


def qrs_bounded(inst: BeamformingInstance, ws: Sequence, i: int):
    """Real 2N_t embedding scaled to unit-variance errors on [-sqrt3, sqrt3]."""
    eps = _epsilon(inst, i)
    h = inst.channels[i]
    z = interference_matrix(ws, inst, i)
    if isinstance(z, Affine):
        q = Affine.block([[z.real, -z.imag], [z.imag, z.real]]) * (eps**2 / 3.0)
        zh = z @ h
        r = Affine.concat([zh.real, zh.imag]) * (eps / math.sqrt(3.0))
    else:
        q = (eps**2 / 3.0) * np.block([[z.real, -z.imag], [z.imag, z.real]])
        zh = z @ h
        r = (eps / math.sqrt(3.0)) * np.concatenate([zh.real, zh.imag])
    s = _quad(z, h) - inst.noise_powers[i]
    return q, r, s


def _quad(z, h):
    if isinstance(z, Affine):
        return z.quad(h).real
    return float(np.real(h.conj() @ z @ h))


def eval_qrs_gaussian(inst: BeamformingInstance, ws: Sequence[np.ndarray], i: int) -> QrsData:
    ws = [np.asarray(w, dtype=complex) for w in ws]
    q, r, s = qrs_gaussian(inst, ws, i)
    return QrsData(0.5 * (q + q.conj().T), r, float(s), float(inst.outage_caps[i]))


def eval_qrs_bounded(inst: BeamformingInstance, ws: Sequence[np.ndarray], i: int) -> QrsData:
    ws = [np.asarray(w, dtype=complex) for w in ws]
    q, r, s = qrs_bounded(inst, ws, i)
    return QrsData(0.5 * (q + q.T), r, float(s), float(inst.outage_caps[i]))


def hermitian_vec(q):
    """Real and imaginary parts of every entry; Euclidean norm equals ||Q||_F."""
    if isinstance(q, Affine):
        flat = q.flatten()
        return Affine.concat([flat.real, flat.imag])
    q = np.asarray(q)
    return np.concatenate([q.real.ravel(), q.imag.ravel()])


# -- program skeletons ----------------------------------------------------------------------

@dataclass
class RarProgram:
    """A program under construction: builder, per-user W expressions, records."""

    inst: BeamformingInstance
    builder: ProgramBuilder
    ws: list[Affine]
    powers: Affine | None = None  # set for power allocation programs
    methods: list[Method] = field(default_factory=list)
    user_constraints: dict = field(default_factory=dict)

    def build(self) -> ConicProgram:
        return self.builder.build()

    def w_values(self, x: np.ndarray) -> list[np.ndarray]:
        out = []
        for w in self.ws:
            v = w.value(x)
            out.append(0.5 * (v + v.conj().T))
        return out


def build_sdr(inst: BeamformingInstance) -> RarProgram:
    """Relaxed program: W_i Hermitian PSD, minimize sum tr(W_i)."""
    b = ProgramBuilder()
    ws = [b.hermitian(inst.n_t, f"W{i + 1}") for i in range(inst.k)]
    for i, w in enumerate(ws):
        b.add_hermitian_psd(w, tag=f"W{i + 1} psd")
    total = ws[0].trace()
    for w in ws[1:]:
        total = total + w.trace()
    b.minimize(total.real)
    return RarProgram(inst, b, ws)


def build_power_program(inst: BeamformingInstance, directions: np.ndarray) -> RarProgram:
    """Fixed beam directions u_i; W_i = p_i u_i u_i^H with powers p >= 0."""
    directions = np.atleast_2d(np.asarray(directions, dtype=complex))
    if directions.shape != (inst.k, inst.n_t):
        raise ValueError("need one direction per user")
    b = ProgramBuilder()
    p = b.variables(inst.k, "p")
    b.add_nonneg(p, tag="p >= 0")
    ws = []
    for i in range(inst.k):
        u = directions[i]
        outer = np.outer(u, u.conj())
        ws.append(Affine(np.einsum("ij,v->ijv", outer, p.coef[i]), np.zeros_like(outer)))
    total = p[0]
    for i in range(1, inst.k):
        total = total + p[i]
    b.minimize(total)
    return RarProgram(inst, b, ws, powers=p)


def _user_rhos(inst, method: Method) -> np.ndarray:
    if method.rho is not None:
        return np.full(inst.k, method.rho)
    return np.asarray(inst.outage_caps, dtype=float)


# -- per-user constraint blocks (q, r, s affine; also usable with constant data) -----------

def sphere_constraints(b: ProgramBuilder, q: Affine, r: Affine, s: Affine, d: float,
                       balance: float = 1.0, tag: str = "") -> dict:
    """[[Q + tI, r], [r^H, s - t d^2]] >= 0 with t >= 0.

    ``balance`` is the congruence factor a in diag(a I, 1); together with a
    rescaled multiplier it leaves the constraint unchanged but evens out the
    block magnitudes, which matters to the first-order solver.
    """
    n = q.shape[0]
    a = balance
    tau = b.scalar(f"{tag}t")
    b.add_nonneg(tau, tag=f"{tag} t>=0")
    t = tau * (1.0 / (a * d) if d > 0 else 1.0 / a**2)
    lmi = Affine.block([
        [(q + _outer_scalar(t, np.eye(n))) * a**2, _col(r) * a],
        [_col(r).H * a, _as_matrix(s - t * d**2)],
    ])
    b.add_hermitian_psd(lmi, tag=f"{tag} sphere lmi")
    return {"radius": d, "t": t}


def bernstein_constraints(b: ProgramBuilder, q: Affine, r: Affine, s: Affine, rho: float, tag: str = "") -> dict:
    """tr Q - sqrt(-2 ln rho) x + ln(rho) y + s >= 0, ||[vec Q; sqrt2 r]|| <= x, yI + Q >= 0, y >= 0."""
    if not 0.0 < rho < 1.0:
        raise DomainError("the Bernstein restriction needs rho in (0, 1) (log singularity at 1)")
    n = q.shape[0]
    lr = math.log(rho)
    x = b.scalar(f"{tag}x")
    y = b.scalar(f"{tag}y")
    b.add_nonneg(q.trace().real - math.sqrt(-2.0 * lr) * x + lr * y + s, tag=f"{tag} bernstein row")
    b.add_soc(Affine.concat([x, hermitian_vec(q), math.sqrt(2.0) * r.real, math.sqrt(2.0) * r.imag]),
              tag=f"{tag} bernstein soc")
    b.add_hermitian_psd(q + _outer_scalar(y, np.eye(n)), tag=f"{tag} bernstein lmi")
    b.add_nonneg(y, tag=f"{tag} y>=0")
    return {"rho": rho, "x": x, "y": y}


# Weight on ||r|| in the Gaussian decomposition bound. 2 Re{e^H r} with
# e ~ CN(0, I) has variance 2 ||r||^2, so its moment generating function is
# exp(u^2 ||r||^2) and the sub-Gaussian constant is ||r||^2, giving weight 1.
# The frequently quoted weight 1/sqrt2 uses exp(u^2 ||r||^2 / 2), which
# undercounts the variance and is unsafe when the linear part dominates.
LINEAR_WEIGHT = 1.0
LINEAR_WEIGHT_UNCORRECTED = 1.0 / math.sqrt(2.0)


def decomposition_constraints(b: ProgramBuilder, q: Affine, r: Affine, s: Affine, rho: float,
                              tag: str = "", linear_weight: float = LINEAR_WEIGHT) -> dict:
    """s + tr Q >= mu (x + y), w ||r|| <= x, v ||vec Q|| <= y (w = ``linear_weight``)."""
    _, v, mu = decomposition_constants(rho)
    x = b.scalar(f"{tag}x")
    y = b.scalar(f"{tag}y")
    b.add_nonneg(s + q.trace().real - mu * (x + y), tag=f"{tag} decomposition row")
    b.add_soc(Affine.concat([x, linear_weight * r.real, linear_weight * r.imag]), tag=f"{tag} linear-part soc")
    b.add_soc(Affine.concat([y, v * hermitian_vec(q)]), tag=f"{tag} quadratic-part soc")
    return {"rho": rho, "v": v, "mu": mu, "x": x, "y": y}


def bounded_constraints(b: ProgramBuilder, q: Affine, r: Affine, s: Affine, rho: float, tag: str = "",
                       weights: tuple[float, float] = (DIAGONAL_WEIGHT, OFF_DIAGONAL_WEIGHT)) -> dict:
    """Real data, unit-variance errors: s + tr Q >= mu sum t_l, sqrt2 ||r|| <= t_0, band norms <= t_l."""
    if not 0.0 < rho < 1.0:
        raise DomainError("the decomposition restriction needs rho in (0, 1)")
    n = q.shape[0]
    sigma_e2 = 1.0  # errors normalized to unit variance on [-sqrt3, sqrt3]
    t = b.variables(n + 1, f"{tag}t")
    total = t[0]
    for l in range(1, n + 1):
        total = total + t[l]
    mu = 2.0 * math.sqrt(-math.log(rho))
    b.add_nonneg(s + sigma_e2 * q.trace() - mu * total, tag=f"{tag} bounded row")
    b.add_soc(Affine.concat([t[0], math.sqrt(2.0) * r]), tag=f"{tag} linear-part soc")
    for l, band in enumerate(coloring_sets(n), start=1):
        entries = [coloring_weight(j, k, weights) * q[j, k] for j, k in band]
        b.add_soc(Affine.concat([t[l]] + entries), tag=f"{tag} band {l} soc")
    return {"rho": rho, "t": t}


def _balance(inst: BeamformingInstance, i: int) -> float:
    cnorm = float(np.linalg.norm(_factor(inst, i), 2)) ** 2
    return cnorm ** -0.25 if cnorm > 0 else 1.0


def add_method1(prog: RarProgram, method: Method | None = None) -> RarProgram:
    method = method or Method(SPHERE)
    inst = prog.inst
    for i in range(inst.k):
        q, r, s = qrs_gaussian(inst, prog.ws, i)
        d = method.radius if method.radius is not None else sphere_radius(inst.n_t, float(inst.outage_caps[i]))
        prog.user_constraints[i] = sphere_constraints(prog.builder, q, r, s, d, _balance(inst, i), f"user{i + 1}")
    prog.methods.append(method)
    return prog


def add_method2(prog: RarProgram, method: Method | None = None) -> RarProgram:
    method = method or Method(BERNSTEIN)
    inst = prog.inst
    rhos = _user_rhos(inst, method)
    if np.any(rhos >= 1.0):
        raise DomainError("the Bernstein restriction needs rho < 1 (log singularity at 1)")
    for i in range(inst.k):
        q, r, s = qrs_gaussian(inst, prog.ws, i)
        prog.user_constraints[i] = bernstein_constraints(prog.builder, q, r, s, float(rhos[i]), f"user{i + 1}")
    prog.methods.append(method)
    return prog


def add_method3(prog: RarProgram, method: Method | None = None) -> RarProgram:
    method = method or Method(DECOMP_GAUSSIAN)
    inst = prog.inst
    rhos = _user_rhos(inst, method)
    if np.any(rhos >= 1.0):
        raise DomainError("the decomposition restriction needs rho < 1")
    for i in range(inst.k):
        q, r, s = qrs_gaussian(inst, prog.ws, i)
        prog.user_constraints[i] = decomposition_constraints(prog.builder, q, r, s, float(rhos[i]), f"user{i + 1}")
    prog.methods.append(method)
    return prog


def add_method4(prog: RarProgram, method: Method | None = None) -> RarProgram:
    method = method or Method(DECOMP_BOUNDED)
    inst = prog.inst
    rhos = _user_rhos(inst, method)
    if np.any(rhos >= 1.0):
        raise DomainError("the decomposition restriction needs rho < 1")
    for i in range(inst.k):
        q, r, s = qrs_bounded(inst, prog.ws, i)
        prog.user_constraints[i] = bounded_constraints(prog.builder, q, r, s, float(rhos[i]), f"user{i + 1}")
    prog.methods.append(method)
    return prog


def add_nonrobust(prog: RarProgram, method: Method | None = None) -> RarProgram:
    inst, b = prog.inst, prog.builder
    for i in range(inst.k):
        z = interference_matrix(prog.ws, inst, i)
        b.add_nonneg(z.quad(inst.channels[i]).real - inst.noise_powers[i], tag=f"user{i + 1} sinr row")
    prog.methods.append(method or Method(NONROBUST))
    return prog


_ADDERS = {SPHERE: add_method1, BERNSTEIN: add_method2, DECOMP_GAUSSIAN: add_method3,
           DECOMP_BOUNDED: add_method4, NONROBUST: add_nonrobust}


def apply_method(prog: RarProgram, method: Method) -> RarProgram:
    if method.needs_gaussian and not prog.inst.gaussian:
        raise DomainError(f"{method.label} needs a Gaussian error model")
    if method.kind == DECOMP_BOUNDED and prog.inst.gaussian:
        raise DomainError("Method IV needs the uniform bounded error model")
    return _ADDERS[method.kind](prog, method)


def build_rar(inst: BeamformingInstance, method: Method) -> RarProgram:
    return apply_method(build_sdr(inst), method)


def _outer_scalar(t: Affine, m: np.ndarray) -> Affine:
    """Scalar expression t times a constant matrix m."""
    return Affine(np.einsum("ij,v->ijv", m, t.coef), t.const * m)


def _col(r: Affine) -> Affine:
    return Affine(r.coef[:, None, :], r.const[:, None])


def _as_matrix(s: Affine) -> Affine:
    return Affine(s.coef[None, None, :], np.asarray(s.const).reshape(1, 1))


# -- numeric margins (independent of the conic encoding) ----------------------------------

def sphere_min_s(q: np.ndarray, r: np.ndarray, d: float) -> tuple[float, float]:
    """Smallest s (and its multiplier t) making the sphere LMI feasible.

    By a Schur complement the LMI holds iff Q + tI > 0 and
    s >= t d^2 + r^H (Q + tI)^{-1} r; the right side is convex in t.
    """
    dec = hermitian_eig(q)
    lam = dec.eigenvalues
    c2 = np.abs(dec.eigenvectors.conj().T @ r) ** 2
    lo = max(0.0, -lam[0])

    def f(t):
        den = lam + t
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(c2 > 0, c2 / den, 0.0)
        if np.any((den <= 0) & (c2 > 0)):
            return math.inf
        return t * d * d + float(np.sum(terms))

    scale = max(1.0, float(np.abs(lam).max(initial=0.0)), float(np.sqrt(c2.sum())))
    hi = lo + 10.0 * scale + (math.sqrt(c2.sum()) / d if d > 0 else 1e6 * scale)
    eps = 1e-12 * scale
    res = minimize_scalar(f, bounds=(lo + eps, hi), method="bounded",
                          options={"xatol": 1e-13 * scale, "maxiter": 2000})
    t = float(res.x)
    best = f(t)
    if np.all(c2[lam + lo <= eps] == 0) and f(lo) < best:
        t, best = lo, f(lo)
    return best, t


def bernstein_margin(qrs: QrsData) -> float:
    """tr Q - sqrt(-2 ln rho) sqrt(||Q||_F^2 + 2||r||^2) + ln(rho) lambda^+(Q) + s."""
    q, r = qrs.Q, qrs.r
    lr = math.log(qrs.rho)
    lam_plus = max(-float(hermitian_eig(q).eigenvalues[0]), 0.0)
    return float(np.real(np.trace(q)) - math.sqrt(-2 * lr) * math.sqrt(np.linalg.norm(q) ** 2 + 2 * np.linalg.norm(r) ** 2)
                 + lr * lam_plus + qrs.s)


def decomposition_margin(qrs: QrsData, linear_weight: float = LINEAR_WEIGHT) -> float:
    _, v, mu = decomposition_constants(qrs.rho)
    return float(qrs.s + np.real(np.trace(qrs.Q))
                 - mu * (linear_weight * np.linalg.norm(qrs.r) + v * np.linalg.norm(qrs.Q)))


def bounded_margin(qrs: QrsData, weights: tuple[float, float] = (DIAGONAL_WEIGHT, OFF_DIAGONAL_WEIGHT)) -> float:
    q = np.asarray(qrs.Q, dtype=float)
    n = q.shape[0]
    mu = 2.0 * math.sqrt(-math.log(qrs.rho))
    bands = sum(math.sqrt(sum((coloring_weight(j, k, weights) * q[j, k]) ** 2 for j, k in band))
                for band in coloring_sets(n))
    return float(qrs.s + np.trace(q) - mu * (math.sqrt(2.0) * np.linalg.norm(qrs.r) + bands))


def sphere_margin(qrs: QrsData, d: float | None = None) -> float:
    if d is None:
        d = sphere_radius(qrs.Q.shape[0], qrs.rho)
    return qrs.s - sphere_min_s(qrs.Q, qrs.r, d)[0]


def restriction_margin(kind: str, qrs: QrsData) -> float:
    """Signed slack of the restriction at a numeric triple (>= 0 means it holds)."""
    if kind == SPHERE:
        return sphere_margin(qrs)
    if kind == BERNSTEIN:
        return bernstein_margin(qrs)
    if kind == DECOMP_GAUSSIAN:
        return decomposition_margin(qrs)
    if kind == DECOMP_BOUNDED:
        return bounded_margin(qrs)
    if kind == NONROBUST:
        return qrs.s
    raise ValueError(kind)


def with_override(method: Method, value: float) -> Method:
    if method.kind == SPHERE:
        return replace(method, radius=value)
    return replace(method, rho=value)


def user_margins(inst: BeamformingInstance, method: Method, ws: Sequence[np.ndarray]) -> np.ndarray:
    """Per-user restriction slack at numeric W (with the method's overrides applied)."""
    out = np.empty(inst.k)
    rhos = _user_rhos(inst, method)
    for i in range(inst.k):
        if method.kind == NONROBUST:
            z = interference_matrix([np.asarray(w, dtype=complex) for w in ws], inst, i)
            out[i] = _quad(z, inst.channels[i]) - inst.noise_powers[i]
            continue
        if method.kind == DECOMP_BOUNDED:
            qrs = eval_qrs_bounded(inst, ws, i)
        else:
            qrs = eval_qrs_gaussian(inst, ws, i)
        qrs.rho = float(rhos[i])
        if method.kind == SPHERE:
            d = method.radius if method.radius is not None else sphere_radius(inst.n_t, float(inst.outage_caps[i]))
            out[i] = sphere_margin(qrs, d)
        else:
            out[i] = restriction_margin(method.kind, qrs)
    return out

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from oracles import (
    boundary_triple,
    conic_feasible,
    conic_min_s,
    mc_violation,
    random_qr,
)
from outagebf.conic import OPTIMAL, PRIMAL_INFEASIBLE, solve, smat
from outagebf.conic.cones import PSD
from outagebf.model import GaussianCov, UniformIID, generate_channels, make_instance
from outagebf.numerics import DomainError
from outagebf.restriction import (
    BERNSTEIN,
    DECOMP_BOUNDED,
    DECOMP_GAUSSIAN,
    DIAGONAL_WEIGHT,
    LINEAR_WEIGHT,
    LINEAR_WEIGHT_UNCORRECTED,
    NONROBUST,
    OFF_DIAGONAL_WEIGHT,
    SPHERE,
    UNIT_SUPPORT_WEIGHTS,
    Method,
    QrsData,
    bernstein_margin,
    bounded_margin,
    build_rar,
    build_sdr,
    coloring_sets,
    coloring_weight,
    decomposition_constants,
    decomposition_margin,
    eval_qrs_bounded,
    eval_qrs_gaussian,
    hermitian_vec,
    restriction_margin,
    sphere_min_s,
    sphere_radius,
    user_margins,
)

ROBUST = (SPHERE, BERNSTEIN, DECOMP_GAUSSIAN, DECOMP_BOUNDED)


def gaussian_instance(n_t=3, k=3, seed=0, sigma_e2=0.002, gamma_db=5.0, rho=0.1, corr=0.0):
    return make_instance(generate_channels(n_t, k, seed), gamma_db, rho,
                         GaussianCov.correlated(sigma_e2, corr, n_t, k))


def uniform_instance(n_t=3, k=3, seed=0, eps=0.02, gamma_db=5.0, rho=0.1):
    return make_instance(generate_channels(n_t, k, seed), gamma_db, rho, UniformIID.common(eps, k))


def random_ws(rng, n_t, k):
    out = []
    for _ in range(k):
        g = rng.standard_normal((n_t, n_t)) + 1j * rng.standard_normal((n_t, n_t))
        out.append(g @ g.conj().T / n_t)
    return out


# -- method selector ---------------------------------------------------------------------

@pytest.mark.parametrize("name,kind", [("1", SPHERE), ("II", BERNSTEIN), ("method3", DECOMP_GAUSSIAN),
                                       ("iv", DECOMP_BOUNDED), ("non-robust", NONROBUST)])
def test_method_parse(name, kind):
    assert Method.parse(name).kind == kind


@pytest.mark.parametrize("kw", [dict(kind="bogus"), dict(kind=SPHERE, radius=-1.0),
                                dict(kind=BERNSTEIN, rho=1.0), dict(kind=BERNSTEIN, rho=0.0),
                                dict(kind=SPHERE, rho=0.1), dict(kind=BERNSTEIN, radius=1.0)])
def test_method_override_validation(kw):
    with pytest.raises(ValueError):
        Method(**kw)


# -- (Q, r, s) maps ----------------------------------------------------------------------

def test_qrs_identity_substitution():
    inst = make_instance(np.array([[1, 0, 0]]), 0.0, 0.1, GaussianCov((np.eye(3, dtype=complex),)))
    qrs = eval_qrs_gaussian(inst, [np.eye(3)], 0)
    assert np.allclose(qrs.Q, np.eye(3))
    assert np.allclose(qrs.r, [1, 0, 0])
    assert qrs.s == pytest.approx(0.9)


def test_qrs_zero_beamformers():
    inst = gaussian_instance()
    qrs = eval_qrs_gaussian(inst, [np.zeros((3, 3))] * 3, 1)
    assert np.all(qrs.Q == 0) and np.all(qrs.r == 0)
    assert qrs.s == pytest.approx(-0.1)


def test_qrs_covariance_homogeneity():
    h = generate_channels(3, 2, 4)
    ws = random_ws(np.random.default_rng(0), 3, 2)
    a = eval_qrs_gaussian(make_instance(h, 3.0, 0.1, GaussianCov.iid(1.0, 3, 2)), ws, 0)
    b = eval_qrs_gaussian(make_instance(h, 3.0, 0.1, GaussianCov.iid(0.002, 3, 2)), ws, 0)
    assert np.allclose(b.Q, 0.002 * a.Q)
    assert np.allclose(b.r, math.sqrt(0.002) * a.r)
    assert b.s == pytest.approx(a.s)


def test_qrs_rejects_model_mismatch():
    with pytest.raises(DomainError):
        eval_qrs_gaussian(uniform_instance(), [np.eye(3)] * 3, 0)
    with pytest.raises(DomainError):
        eval_qrs_bounded(gaussian_instance(), [np.eye(3)] * 3, 0)


def test_bounded_real_data_has_zero_imaginary_blocks():
    inst = make_instance(np.array([[1.0, 0.5], [0.2, 1.0]]), 3.0, 0.1, UniformIID.common(0.1, 2))
    ws = [np.array([[1.0, 0.3], [0.3, 0.5]]), np.eye(2)]
    q = eval_qrs_bounded(inst, ws, 0).Q
    assert np.all(q[:2, 2:] == 0) and np.all(q[2:, :2] == 0)


def test_bounded_normalization_point():
    h = generate_channels(2, 2, 5)
    ws = random_ws(np.random.default_rng(1), 2, 2)
    inst = make_instance(h, 3.0, 0.1, UniformIID.common(math.sqrt(3.0), 2))
    qrs = eval_qrs_bounded(inst, ws, 0)
    z = ws[0] / inst.sinr_targets[0] - ws[1]
    assert np.allclose(qrs.Q, np.block([[z.real, -z.imag], [z.imag, z.real]]))
    zh = z @ h[0]
    assert np.allclose(qrs.r, np.r_[zh.real, zh.imag])


def test_bounded_trace_identity():
    rng = np.random.default_rng(2)
    inst = uniform_instance(eps=0.05)
    ws = random_ws(rng, 3, 3)
    for i in range(3):
        z = ws[i] / inst.sinr_targets[i] - sum(ws[k] for k in range(3) if k != i)
        q = eval_qrs_bounded(inst, ws, i).Q
        assert np.trace(q) == pytest.approx((0.05**2 / 3) * 2 * np.trace(z).real, rel=1e-12)


def test_hermitian_vec_norm_is_frobenius():
    rng = np.random.default_rng(3)
    for n in range(1, 6):
        g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        q = g + g.conj().T
        assert np.linalg.norm(hermitian_vec(q)) == pytest.approx(np.linalg.norm(q), rel=1e-14)
        assert hermitian_vec(q).size == 2 * n * n


# -- constants -----------------------------------------------------------------------------

def test_sphere_radius_example():
    d = sphere_radius(3, 0.1)
    assert d == pytest.approx(math.sqrt(stats.chi2.ppf(0.9, 6) / 2), abs=1e-6)
    assert d == pytest.approx(2.3071, abs=1e-4)
    assert sphere_radius(3, 1.0) == 0.0


def test_decomposition_constants_example():
    theta, v, mu = decomposition_constants(0.1)
    assert theta == pytest.approx(0.9618, abs=1e-4)
    assert v == pytest.approx(1.5777, abs=1e-4)
    assert v == pytest.approx(math.sqrt(-math.log(0.1)) / theta, rel=1e-12)
    assert mu == pytest.approx(3.0349, abs=1e-4)


def test_coloring_sets_three():
    sets = coloring_sets(3)
    one_based = [sorted((j + 1, k + 1) for j, k in s) for s in sets]
    assert one_based[0] == sorted([(1, 1), (2, 3), (3, 2)])
    assert one_based[1] == sorted([(1, 2), (2, 1), (3, 3)])
    assert one_based[2] == sorted([(1, 3), (3, 1), (2, 2)])


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6, 8, 16])
def test_coloring_sets_partition(n):
    sets = coloring_sets(n)
    assert len(sets) == n
    flat = [e for s in sets for e in s]
    assert len(flat) == n * n == len(set(flat))
    for s in sets:
        # each band pairs every index with at most one partner, so its terms are independent
        idx = [j for j, k in s]
        assert len(idx) == len(set(idx))
        assert all((k, j) in s for j, k in s)


def test_coloring_weights():
    assert coloring_weight(2, 2) == DIAGONAL_WEIGHT
    assert coloring_weight(1, 2) == OFF_DIAGONAL_WEIGHT
    assert coloring_weight(2, 2, UNIT_SUPPORT_WEIGHTS) == pytest.approx(1 / math.sqrt(8))
    assert coloring_weight(1, 2, UNIT_SUPPORT_WEIGHTS) == 1.0


def _log_mgf_square(lam):
    """ln E exp(lam (e^2 - 1)) for e uniform on [-sqrt3, sqrt3], by quadrature."""
    shift = max(2 * lam, -lam)
    v, _ = integrate.quad(lambda x: math.exp(lam * (x * x - 1) - shift), 0, math.sqrt(3), epsrel=1e-13)
    return math.log(v / math.sqrt(3)) + shift


def _log_mgf_product(lam):
    """ln E exp(lam e_j e_k): average over e_k of sinh(sqrt3 lam e_k) / (sqrt3 lam e_k)."""
    def log_inner(y):
        z = math.sqrt(3) * abs(lam) * y
        return z + math.log((1 - math.exp(-2 * z)) / (2 * z)) if z > 1e-8 else z * z / 6
    top = log_inner(math.sqrt(3))
    v, _ = integrate.quad(lambda y: math.exp(log_inner(y) - top), 0, math.sqrt(3), epsrel=1e-13)
    return math.log(v / math.sqrt(3)) + top


def test_band_weights_bound_the_mgfs():
    lams = np.r_[-np.logspace(-3, 1.5, 300), np.logspace(-3, 1.5, 300)]
    diag = np.array([_log_mgf_square(l) / l ** 2 for l in lams])
    prod = np.array([2 * _log_mgf_product(l) / l ** 2 for l in lams])
    assert diag.max() <= DIAGONAL_WEIGHT ** 2
    assert prod.max() <= OFF_DIAGONAL_WEIGHT ** 2
    # and they are not loose: the sup is reached to within rounding
    assert diag.max() == pytest.approx(0.440387, abs=2e-5)
    assert prod.max() == pytest.approx(1.011429, abs=2e-5)
    # the small-|lam| limit is half the variance: var(e^2) = 4/5, var(e_j e_k) = 1
    assert _log_mgf_square(1e-4) / 1e-8 == pytest.approx(0.4, rel=1e-3)
    assert 2 * _log_mgf_product(1e-4) / 1e-8 == pytest.approx(1.0, rel=1e-3)


@pytest.mark.parametrize("rho", [0.01, 0.05, 0.1])
def test_unit_support_weights_unsafe_on_diagonal_q(rho):
    # Q = -I_2, r = 0: the constraint is e1^2 + e2^2 <= s, with both squares in one band
    q = -np.eye(2)

    def violation(weights):
        s = -bounded_margin(QrsData(q, np.zeros(2), 0.0, rho), weights)
        # P(U1 + U2 > s) with U_j = e_j^2, whose density on [0, 3] is 1 / (2 sqrt(3 u))
        cdf_u = lambda u: math.sqrt(min(max(u, 0.0), 3.0) / 3.0)
        inner = lambda u: (1 - cdf_u(s - u)) / (2 * math.sqrt(3 * u))
        v, _ = integrate.quad(inner, 0, 3, points=[max(s - 3, 0)], limit=200)
        return v

    assert violation(UNIT_SUPPORT_WEIGHTS) > rho
    assert violation((DIAGONAL_WEIGHT, OFF_DIAGONAL_WEIGHT)) <= rho


# -- program skeleton ------------------------------------------------------------------------

def test_sdr_skeleton_structure():
    inst = gaussian_instance(n_t=2, k=2)
    prog = build_sdr(inst)
    p = prog.build()
    psd = [blk for blk in p.cone.blocks if blk.kind == PSD]
    assert [blk.size for blk in psd] == [4, 4]
    diag = [j for j, name in enumerate(p.names) if name.endswith("]") and name.split("[")[1].split(",")[0]
            == name.split(",")[1].rstrip("]")]
    assert np.all(p.c[diag] == 1.0)
    assert np.count_nonzero(p.c) == 4
    # W_i = I gives K * N_t
    x = np.zeros(p.n)
    x[diag] = 1.0
    assert p.c @ x == pytest.approx(4.0)


def test_sdr_skeleton_optimum_zero():
    sol = solve(build_sdr(gaussian_instance()).build())
    assert sol.status == OPTIMAL
    assert abs(sol.objective) <= 1e-6


def test_method_block_counts():
    inst = gaussian_instance(n_t=3, k=2)
    base = build_sdr(inst).build().cone
    for kind, extra in [(SPHERE, {"psd": 2}), (BERNSTEIN, {"psd": 2, "soc": 2}),
                        (DECOMP_GAUSSIAN, {"soc": 4})]:
        cone = build_rar(inst, Method(kind)).build().cone
        for k, v in extra.items():
            assert cone.count(k) - base.count(k) == v
    p = build_rar(inst, Method(BERNSTEIN)).build()
    socs = [blk.size for blk in p.cone.blocks if blk.kind == "soc"]
    assert socs == [2 * 9 + 2 * 3 + 1] * 2
    lmis = [blk.size for blk in p.cone.blocks if blk.kind == PSD]
    assert sorted(lmis) == [6] * 4  # 2 W blocks + 2 y I + Q blocks, complex side 3
    p = build_rar(inst, Method(SPHERE)).build()
    assert sorted(blk.size for blk in p.cone.blocks if blk.kind == PSD) == [6, 6, 8, 8]
    p4 = build_rar(uniform_instance(n_t=3, k=2), Method(DECOMP_BOUNDED)).build()
    assert p4.cone.count("soc") == 2 * (2 * 3 + 1)


def test_method_model_mismatch_rejected():
    with pytest.raises(DomainError):
        build_rar(uniform_instance(), Method(SPHERE))
    with pytest.raises(DomainError):
        build_rar(gaussian_instance(), Method(DECOMP_BOUNDED))


@pytest.mark.parametrize("kind", [BERNSTEIN, DECOMP_GAUSSIAN])
def test_rho_one_rejected(kind):
    with pytest.raises(DomainError):
        build_rar(gaussian_instance(rho=1.0), Method(kind))


def test_sphere_rho_one_degenerates():
    inst = gaussian_instance(rho=1.0)
    build_rar(inst, Method(SPHERE)).build()
    qrs = QrsData(-np.eye(2), np.zeros(2), 0.0, 1.0)
    assert sphere_min_s(qrs.Q, qrs.r, 0.0)[0] == pytest.approx(0.0, abs=1e-9)
    assert conic_feasible(SPHERE, QrsData(-np.eye(2), np.zeros(2), 0.0, 1.0)) == OPTIMAL
    assert conic_feasible(SPHERE, QrsData(-np.eye(2), np.zeros(2), -1e-3, 1.0)) == PRIMAL_INFEASIBLE


# -- examples on constant data --------------------------------------------------------------------

def test_sphere_small_examples():
    assert conic_feasible(SPHERE, QrsData(np.eye(1), np.zeros(1), 1.0, 0.1), radius=1.0) == OPTIMAL
    assert conic_feasible(SPHERE, QrsData(-np.eye(1), np.zeros(1), 1.0, 0.1), radius=2.0) == PRIMAL_INFEASIBLE


def test_bernstein_spot_value():
    # T(eta) = tr Q - sqrt(2 eta) ||[vec Q; sqrt2 r]|| - eta lambda^+ at Q = I_2, r = 0, eta = 2
    qrs = QrsData(np.eye(2), np.zeros(2), 0.0, math.exp(-2.0))
    assert bernstein_margin(qrs) == pytest.approx(2 - 2 * math.sqrt(2), abs=1e-12)
    assert bernstein_margin(qrs) == pytest.approx(-0.8284, abs=1e-4)


@pytest.mark.parametrize("kind", [BERNSTEIN, DECOMP_GAUSSIAN, DECOMP_BOUNDED])
def test_deterministic_constraint_feasible(kind):
    n = 4 if kind == DECOMP_BOUNDED else 2
    assert conic_feasible(kind, QrsData(np.zeros((n, n)), np.zeros(n), 1.0, 0.1)) == OPTIMAL


def test_bernstein_psd_q_needs_no_shift():
    b_margin = bernstein_margin(QrsData(np.eye(2), np.zeros(2), 10.0, 0.1))
    # with y = 0 the row reads tr Q - sqrt(-2 ln rho) ||Q||_F + s
    assert b_margin == pytest.approx(2 - math.sqrt(-2 * math.log(0.1)) * math.sqrt(2) + 10)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([DECOMP_GAUSSIAN, DECOMP_BOUNDED, BERNSTEIN]), st.integers(0, 2**31 - 1),
       st.floats(0.1, 10.0))
def test_positive_homogeneity(kind, seed, c):
    rng = np.random.default_rng(seed)
    q, r = random_qr(kind, rng)
    qrs = QrsData(q, r, 1.0, 0.1)
    scaled = QrsData(c * q, c * r, c * 1.0, 0.1)
    a, b = restriction_margin(kind, qrs), restriction_margin(kind, scaled)
    assert b == pytest.approx(c * a, rel=1e-9, abs=1e-12)


# -- consistency of the emitted rows with the numeric maps ----------------------------------------

def _blocks(p, x):
    slack = p.b - p.A @ x
    out = []
    for blk, off, tag in zip(p.cone.blocks, p.cone.offsets(), p.tags):
        vals = slack[off:off + blk.dim]
        out.append((tag, smat(vals, blk.size) if blk.kind == PSD else vals))
    return out


def _embed(m):
    return np.block([[m.real, -m.imag], [m.imag, m.real]])


@pytest.mark.parametrize("kind", [SPHERE, BERNSTEIN, DECOMP_GAUSSIAN, DECOMP_BOUNDED, NONROBUST])
def test_emitted_rows_match_numeric_maps(kind):
    rng = np.random.default_rng(17)
    for trial in range(5):
        inst = uniform_instance(seed=trial) if kind == DECOMP_BOUNDED else \
            gaussian_instance(seed=trial, corr=0.5 * trial / 4, sigma_e2=0.01)
        prog = build_rar(inst, Method(kind))
        p = prog.build()
        x = rng.standard_normal(p.n)
        ws = prog.w_values(x)
        got = dict()
        for tag, val in _blocks(p, x):
            got.setdefault(tag, []).append(val)
        for i in range(inst.k):
            u = f"user{i + 1}"
            aux = {key: (v.value(x) if hasattr(v, "value") else v)
                   for key, v in prog.user_constraints.get(i, {}).items()}
            w_block = got[f"W{i + 1} psd"][0]
            assert np.allclose(w_block, _embed(ws[i]), atol=1e-12)
            if kind == NONROBUST:
                z = ws[i] / inst.sinr_targets[i] - sum(ws[k] for k in range(inst.k) if k != i)
                want = np.real(inst.channels[i].conj() @ z @ inst.channels[i]) - inst.noise_powers[i]
                assert np.allclose(got[f"{u} sinr row"][0], want, atol=1e-12)
                continue
            if kind == DECOMP_BOUNDED:
                qrs = eval_qrs_bounded(inst, ws, i)
                t = aux["t"]
                mu = 2 * math.sqrt(-math.log(qrs.rho))
                assert np.allclose(got[f"{u} bounded row"][0], qrs.s + np.trace(qrs.Q) - mu * t.sum(), atol=1e-12)
                assert np.allclose(got[f"{u} linear-part soc"][0], np.r_[t[0], math.sqrt(2) * qrs.r], atol=1e-12)
                for l, band in enumerate(coloring_sets(qrs.Q.shape[0]), start=1):
                    want = np.r_[t[l], [coloring_weight(j, kk) * qrs.Q[j, kk] for j, kk in band]]
                    assert np.allclose(got[f"{u} band {l} soc"][0], want, atol=1e-12)
                continue
            qrs = eval_qrs_gaussian(inst, ws, i)
            if kind == SPHERE:
                t, d = float(aux["t"]), aux["radius"]
                lmi = got[f"{u} sphere lmi"][0]
                # undo the congruence diag(aI, 1) read off the bottom-right corner
                n = inst.n_t
                a2 = lmi[0, 0] / (qrs.Q[0, 0].real + t)
                a = math.sqrt(a2)
                m = np.block([[a2 * (qrs.Q + t * np.eye(n)), a * qrs.r[:, None]],
                              [a * qrs.r[None, :].conj(), np.array([[qrs.s - t * d * d]])]])
                assert np.allclose(lmi, _embed(m), atol=1e-12)
                assert d == pytest.approx(sphere_radius(n, 0.1))
            elif kind == BERNSTEIN:
                xv, yv = float(aux["x"]), float(aux["y"])
                lr = math.log(qrs.rho)
                row = np.trace(qrs.Q).real - math.sqrt(-2 * lr) * xv + lr * yv + qrs.s
                assert np.allclose(got[f"{u} bernstein row"][0], row, atol=1e-12)
                want = np.r_[xv, hermitian_vec(qrs.Q), math.sqrt(2) * qrs.r.real, math.sqrt(2) * qrs.r.imag]
                assert np.allclose(got[f"{u} bernstein soc"][0], want, atol=1e-12)
                assert np.allclose(got[f"{u} bernstein lmi"][0], _embed(qrs.Q + yv * np.eye(inst.n_t)), atol=1e-12)
            else:
                xv, yv = float(aux["x"]), float(aux["y"])
                _, v, mu = decomposition_constants(qrs.rho)
                row = qrs.s + np.trace(qrs.Q).real - mu * (xv + yv)
                assert np.allclose(got[f"{u} decomposition row"][0], row, atol=1e-12)
                assert np.allclose(got[f"{u} linear-part soc"][0],
                                   np.r_[xv, LINEAR_WEIGHT * qrs.r.real, LINEAR_WEIGHT * qrs.r.imag], atol=1e-12)
                assert np.allclose(got[f"{u} quadratic-part soc"][0], np.r_[yv, v * hermitian_vec(qrs.Q)],
                                   atol=1e-12)


# -- dual route: conic encoding versus closed-form margins ------------------------------------------

@pytest.mark.parametrize("kind", ROBUST)
def test_conic_encoding_matches_closed_form(kind):
    rng = np.random.default_rng(23)
    for _ in range(25):
        qrs = boundary_triple(kind, rng)
        value, status = conic_min_s(kind, qrs)
        assert status == OPTIMAL
        scale = max(1.0, abs(qrs.s), np.abs(qrs.Q).max(), np.abs(qrs.r).max())
        assert abs(value - qrs.s) <= 1e-5 * scale


@pytest.mark.parametrize("balance", [0.3, 1.0, 4.0])
def test_sphere_congruence_is_equivalent(balance):
    rng = np.random.default_rng(5)
    for _ in range(10):
        qrs = boundary_triple(SPHERE, rng)
        value, status = conic_min_s(SPHERE, qrs, balance=balance)
        assert status == OPTIMAL
        scale = max(1.0, abs(qrs.s), np.abs(qrs.Q).max(), np.abs(qrs.r).max())
        assert abs(value - qrs.s) <= 1e-5 * scale


def test_user_margins_agree_with_solved_program():
    inst = gaussian_instance(sigma_e2=0.002, gamma_db=3.0)
    for kind in (SPHERE, BERNSTEIN, DECOMP_GAUSSIAN, NONROBUST):
        prog = build_rar(inst, Method(kind))
        sol = solve(prog.build())
        assert sol.status == OPTIMAL
        m = user_margins(inst, Method(kind), prog.w_values(sol.x))
        # at the optimum the constraints hold and at least one is (nearly) active
        assert np.all(m >= -1e-5)
        assert m.min() <= 1e-4


# -- monotonicity in rho ---------------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.sampled_from(ROBUST), st.integers(0, 2**31 - 1), st.floats(0.001, 0.5), st.floats(0.01, 0.99))
def test_margin_monotone_in_rho(kind, seed, rho_lo, frac):
    rng = np.random.default_rng(seed)
    q, r = random_qr(kind, rng)
    rho_hi = rho_lo + frac * (0.999 - rho_lo)
    lo = restriction_margin(kind, QrsData(q, r, 0.0, rho_lo))
    hi = restriction_margin(kind, QrsData(q, r, 0.0, rho_hi))
    scale = max(1.0, np.abs(q).max(), np.abs(r).max())
    assert lo <= hi + 1e-8 * scale


@pytest.mark.parametrize("kind", ROBUST)
def test_feasible_set_nested_in_rho(kind):
    rng = np.random.default_rng(31)
    for _ in range(5):
        q, r = random_qr(kind, rng)
        s_tight, _ = conic_min_s(kind, QrsData(q, r, 0.0, 0.02))
        s_loose, _ = conic_min_s(kind, QrsData(q, r, 0.0, 0.2))
        assert s_tight >= s_loose - 1e-6 * max(1.0, abs(s_tight))


# -- sphere method is exact on its ball --------------------------------------------------------------------

def ball_minimum(q, r, s, d, rng, starts=50, iters=800):
    n = q.shape[0]
    step = 1.0 / (2.0 * (np.abs(np.linalg.eigvalsh(q)).max() + 1e-12) + 1e-12)
    best = math.inf
    for k in range(starts):
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        z *= d * (rng.random() ** (1 / (2 * n)) if k % 2 else 1.0) / np.linalg.norm(z)
        for _ in range(iters):
            z = z - step * 2.0 * (q @ z + r)
            nz = np.linalg.norm(z)
            if nz > d:
                z *= d / nz
        val = float(np.real(z.conj() @ q @ z) + 2 * np.real(z.conj() @ r) + s)
        best = min(best, val)
    return best


def test_sphere_restriction_exact_on_ball():
    rng = np.random.default_rng(41)
    for _ in range(20):
        qrs = boundary_triple(SPHERE, rng)
        d = sphere_radius(qrs.Q.shape[0], qrs.rho)
        scale = max(1.0, abs(qrs.s), np.abs(qrs.Q).max() * d * d, np.abs(qrs.r).max() * d)
        low = ball_minimum(qrs.Q, qrs.r, qrs.s, d, rng)
        assert low >= -1e-6 * scale
        # boundary-tight: the S-lemma has no slack, so the ball minimum touches zero
        assert low <= 1e-4 * scale


# -- linear-term weight of the Gaussian decomposition bound ----------------------------------------

@pytest.mark.parametrize("rho", [0.001, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5])
def test_decomposition_linear_weight_exact_tail(rho):
    # With Q = 0 the quadratic is 2 Re{e^H r} + s, exactly N(s, 2||r||^2), so the
    # violation at the active constraint is Phi(-s / (sqrt2 ||r||)) in closed form.
    r = np.array([0.3 - 0.4j, 1.2j, -0.5])

    def violation(weight):
        s = -decomposition_margin(QrsData(np.zeros((3, 3)), r, 0.0, rho), weight)
        return stats.norm.cdf(-s / (math.sqrt(2) * np.linalg.norm(r)))

    assert violation(LINEAR_WEIGHT) <= rho
    # the uncorrected weight leaves Phi(-sqrt(-ln rho)), which exceeds rho for small rho
    assert violation(LINEAR_WEIGHT_UNCORRECTED) == pytest.approx(stats.norm.cdf(-math.sqrt(-math.log(rho))))
    if rho <= 0.02:
        assert violation(LINEAR_WEIGHT_UNCORRECTED) > rho


def test_decomposition_linear_weight_value():
    assert LINEAR_WEIGHT == 1.0
    assert LINEAR_WEIGHT_UNCORRECTED == pytest.approx(1 / math.sqrt(2))


# -- safety ---------------------------------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.parametrize("kind", ROBUST)
def test_restriction_safety_on_boundary_triples(kind):
    n_samples = 100_000
    rng = np.random.default_rng(1000 + ROBUST.index(kind))
    mc = np.random.default_rng(2000 + ROBUST.index(kind))
    worst = -math.inf
    for _ in range(200):
        qrs = boundary_triple(kind, rng)
        viol = mc_violation(kind, qrs, n_samples, mc)
        limit = qrs.rho + 3 * math.sqrt(qrs.rho * (1 - qrs.rho) / n_samples)
        worst = max(worst, viol - limit)
        assert viol <= limit, (kind, qrs.rho, viol)
    assert worst <= 0

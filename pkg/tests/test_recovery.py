import math

import numpy as np
import pytest

from outagebf.conic import OPTIMAL
from outagebf.model import GaussianCov, UniformIID, generate_channels, make_instance
from outagebf.recovery import (
    RarSolution,
    beamformers_from_powers,
    extract_beamformers,
    gaussian_randomization,
    power_allocation,
    rank_one_check,
    rank_ratio,
    solve_rar,
)
from outagebf.restriction import Method, user_margins


def as_solution(ws):
    ws = [np.asarray(w, dtype=complex) for w in ws]
    return RarSolution(ws, float(sum(np.trace(w).real for w in ws)), OPTIMAL,
                       np.array([rank_ratio(w) for w in ws]))


def small_instance(seed=0, gamma_db=5.0, sigma_e2=0.002, n_t=3, k=3, rho=0.1):
    return make_instance(generate_channels(n_t, k, seed), gamma_db, rho, GaussianCov.iid(sigma_e2, n_t, k))


# -- rank-one test ---------------------------------------------------------------------------

def test_rank_one_threshold_examples():
    ok, ratios = rank_one_check(as_solution([np.diag([1.0, 0.005])]))
    assert ok and ratios[0] == pytest.approx(1 / 1.005)
    ok, ratios = rank_one_check(as_solution([np.diag([1.0, 0.02])]))
    assert not ok and ratios[0] == pytest.approx(1 / 1.02)


def test_exact_outer_product_ratio_one():
    w = np.array([1 + 1j, 0.5, -2j])
    assert rank_ratio(np.outer(w, w.conj())) == pytest.approx(1.0, abs=1e-12)


def test_zero_matrix_counts_as_rank_one():
    ok, ratios = rank_one_check(as_solution([np.zeros((2, 2)), np.eye(2)]))
    assert ratios[0] == 1.0 and ratios[1] == pytest.approx(0.5)
    assert not ok


# -- extraction -------------------------------------------------------------------------------

def test_extract_scaled_basis_vector():
    w = extract_beamformers(as_solution([0.1 * np.diag([1.0, 0.0])]))
    assert np.allclose(w.vectors[0], [math.sqrt(0.1), 0])


def test_extract_zero():
    w = extract_beamformers(as_solution([np.zeros((3, 3))]))
    assert np.all(w.vectors == 0)


def test_extract_phase_convention_and_power():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        w = extract_beamformers(as_solution([np.outer(v, v.conj())])).vectors[0]
        first = w[np.flatnonzero(np.abs(w) > 1e-12)[0]]
        assert abs(first.imag) <= 1e-12 and first.real > 0
        assert np.linalg.norm(w) ** 2 == pytest.approx(np.linalg.norm(v) ** 2, rel=1e-10)
        # same vector up to a global phase
        assert abs(np.vdot(w, v)) == pytest.approx(np.linalg.norm(v) ** 2, rel=1e-10)


def test_extract_reconstruction_bound():
    rng = np.random.default_rng(1)
    for _ in range(30):
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        lam = np.r_[1.0, rng.uniform(0, 0.003, 3)]
        big = (q * lam) @ q.conj().T
        sol = as_solution([big])
        w = extract_beamformers(sol).vectors[0]
        err = np.linalg.norm(np.outer(w, w.conj()) - big)
        assert err <= (1 - sol.rank_ratios[0]) * np.trace(big).real * 2 + 1e-12


def test_extract_refuses_high_rank():
    with pytest.raises(ValueError, match="randomization"):
        extract_beamformers(as_solution([np.eye(2)]))


# -- power allocation ----------------------------------------------------------------------------

def test_single_user_nonrobust_power():
    h = np.array([[0.6 + 0.3j, -0.2, 1.1j]])
    inst = make_instance(h, 7.0, 0.1, GaussianCov.iid(0.002, 3, 1), sigma2=0.1)
    u = h / np.linalg.norm(h)
    res = power_allocation(u, inst, Method("nonrobust"))
    assert res.feasible
    gamma = 10 ** 0.7
    assert res.powers[0] == pytest.approx(gamma * 0.1 / np.linalg.norm(h) ** 2, rel=1e-6)


def test_orthogonal_direction_infeasible():
    inst = make_instance(np.array([[1.0, 0.0]]), 0.0, 0.1, GaussianCov.iid(0.002, 2, 1))
    res = power_allocation(np.array([[0.0, 1.0]]), inst, Method("nonrobust"))
    assert not res.feasible


def test_noise_scaling_scales_powers():
    h = generate_channels(3, 3, 2)
    # zero-forcing directions: conj(h_i) . u_k = 0 for i != k, so any SINR target is reachable
    zf = np.linalg.inv(h.conj()).T
    u = zf / np.linalg.norm(zf, axis=1, keepdims=True)
    a = power_allocation(u, make_instance(h, 3.0, 0.1, GaussianCov.iid(0.002, 3, 3), sigma2=0.1),
                         Method("nonrobust"))
    b = power_allocation(u, make_instance(h, 3.0, 0.1, GaussianCov.iid(0.002, 3, 3), sigma2=0.4),
                         Method("nonrobust"))
    assert a.feasible and b.feasible
    assert np.allclose(b.powers, 4 * a.powers, rtol=1e-5, atol=1e-9)


def test_power_allocation_rejects_unnormalized():
    inst = small_instance()
    with pytest.raises(ValueError):
        power_allocation(2 * np.eye(3), inst, Method("nonrobust"))


# -- randomization ---------------------------------------------------------------------------------

def test_randomization_rank_one_matches_extraction():
    inst = small_instance(seed=3)
    method = Method("sphere")
    sol = solve_rar(inst, method)
    assert sol.feasible
    w = np.array([np.linalg.eigh(x)[1][:, -1] for x in sol.ws])
    ws = [np.outer(v, v.conj()) * np.trace(x).real for v, x in zip(w, sol.ws)]
    rank_one = as_solution(ws)
    direct = power_allocation(w, inst, method)
    rnd = gaussian_randomization(rank_one, inst, method, rounds=3, seed=1)
    assert direct.feasible and rnd.feasible
    assert rnd.objective <= direct.powers.sum() + 1e-6


def test_randomization_rejects_zero_rounds():
    inst = small_instance()
    sol = solve_rar(inst, Method("nonrobust"))
    with pytest.raises(ValueError):
        gaussian_randomization(sol, inst, Method("nonrobust"), rounds=0)


def test_randomization_deterministic_and_monotone():
    inst = small_instance(seed=5, gamma_db=3.0)
    method = Method("bernstein")
    sol = solve_rar(inst, method)
    # spread the solution so draws actually differ between rounds
    mixed = as_solution([0.8 * w + 0.2 * np.trace(w).real * np.eye(3) / 3 for w in sol.ws])
    a = gaussian_randomization(mixed, inst, method, rounds=6, seed=9)
    b = gaussian_randomization(mixed, inst, method, rounds=6, seed=9)
    c = gaussian_randomization(mixed, inst, method, rounds=12, seed=9)
    assert np.array_equal(a.objectives, b.objectives)
    if a.feasible:
        assert np.array_equal(a.beamformers.vectors, b.beamformers.vectors)
    assert np.array_equal(c.objectives[:6], a.objectives)
    assert c.objective <= a.objective


def test_randomization_all_rounds_infeasible():
    inst = small_instance(seed=1, gamma_db=3.0)
    sol = as_solution([np.eye(3)] * 3)
    # identical channels make 3 users at 30 dB impossible
    hard = make_instance(np.tile(inst.channels[:1], (3, 1)), 30.0, 0.1, GaussianCov.iid(0.002, 3, 3))
    res = gaussian_randomization(sol, hard, Method("nonrobust"), rounds=3)
    assert not res.feasible and res.objective == math.inf and res.best_round is None


# -- returned beamformers satisfy the restriction ------------------------------------------------------

@pytest.mark.parametrize("kind", ["sphere", "bernstein", "decomp_gaussian", "nonrobust"])
def test_returned_beamformers_satisfy_restriction(kind):
    inst = small_instance(seed=11, gamma_db=3.0)
    method = Method(kind)
    sol = solve_rar(inst, method)
    assert sol.feasible
    rnd = gaussian_randomization(sol, inst, method, rounds=5, seed=2)
    assert rnd.feasible
    ws = rnd.beamformers.covariances()
    scale = max(1.0, max(np.abs(w).max() for w in ws))
    assert np.all(user_margins(inst, method, ws) >= -1e-5 * scale)


def test_method_iv_randomization_satisfies_restriction():
    inst = make_instance(generate_channels(3, 3, 4), 3.0, 0.1, UniformIID.common(0.02, 3))
    method = Method("decomp_bounded")
    sol = solve_rar(inst, method)
    assert sol.feasible
    rnd = gaussian_randomization(sol, inst, method, rounds=3, seed=0)
    assert rnd.feasible
    assert np.all(user_margins(inst, method, rnd.beamformers.covariances()) >= -1e-5)


def test_beamformers_from_powers():
    u = np.eye(2)
    w = beamformers_from_powers(u, np.array([4.0, 9.0]))
    assert np.allclose(w.powers, [4, 9])

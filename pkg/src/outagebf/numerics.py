"""Dense linear algebra and special functions used across the package.

Everything here is pure: no module state, safe to call from several workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "EigDecomposition",
    "is_hermitian",
    "real_embedding",
    "jacobi_eigh",
    "hermitian_eig",
    "lambda_max",
    "cholesky_psd",
    "gammainc_lower",
    "chi2_cdf",
    "chi2_inv_cdf",
    "solve_theta_bar",
    "theta_bar_approx",
]


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class EigDecomposition:
    """Ascending eigenvalues and the matching unitary eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def is_hermitian(m: np.ndarray, tol: float = 1e-12) -> bool:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol * scale)


def real_embedding(m: np.ndarray) -> np.ndarray:
    """Map a complex n x n matrix to the real 2n x 2n block [[Re, -Im], [Im, Re]]."""
    m = np.asarray(m)
    re, im = m.real, m.imag
    return np.block([[re, -im], [im, re]])


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n - 1 rounds of disjoint index pairs covering all pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        rounds.append((np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Each sweep visits every off-diagonal pair once, in tournament order so
    that the rotations of one round touch disjoint rows and can be applied
    together. Returns (eigenvalues ascending, orthogonal eigenvector columns).
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    fro = np.linalg.norm(a)
    if fro == 0.0:
        return np.zeros(n), v
    schedule = _round_robin(n)
    for _ in range(max_sweeps):
        if np.linalg.norm(a - np.diag(a.diagonal())) <= tol * fro:
            break
        for p, q in schedule:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _complex_basis_from_embedding(w2: np.ndarray, v2: np.ndarray, n: int, scale: float):
    """Recover n complex eigenpairs from the doubled spectrum of the real embedding.

    Eigenvalues of the embedding come in equal pairs and each 2m-dimensional
    eigenspace holds an m-dimensional complex eigenspace; the complex vectors
    are extracted cluster by cluster with an SVD of the stacked candidates.
    """
    z = v2[:n, :] + 1j * v2[n:, :]
    gap = 1e-9 * max(scale, 1e-300)
    vals, vecs = [], []
    start = 0
    while start < 2 * n:
        stop = start + 1
        while stop < 2 * n and w2[stop] - w2[stop - 1] <= gap:
            stop += 1
        size = stop - start
        m = size // 2
        if size % 2:
            # odd cluster from round-off: absorb the neighbour so pairs stay intact
            stop += 1
            size += 1
            m = size // 2
        u, _, _ = np.linalg.svd(z[:, start:stop], full_matrices=False)
        vecs.append(u[:, :m])
        vals.append(w2[start:stop].reshape(m, 2).mean(axis=1))
        start = stop
    vals = np.concatenate(vals)
    vecs = np.concatenate(vecs, axis=1)
    return vals, vecs


def hermitian_eig(m: np.ndarray) -> EigDecomposition:
    """Eigendecomposition of a complex Hermitian (or real symmetric) matrix.

    Runs cyclic Jacobi on the real 2n x 2n embedding.
    """
    m = np.asarray(m)
    if not is_hermitian(m):
        raise DomainError("matrix is not Hermitian")
    n = m.shape[0]
    if not np.iscomplexobj(m) or not np.any(m.imag):
        w, v = jacobi_eigh(np.real(m))
        return EigDecomposition(w, v.astype(complex) if np.iscomplexobj(m) else v)
    h = 0.5 * (m + m.conj().T)
    w2, v2 = jacobi_eigh(real_embedding(h))
    scale = max(1.0, float(np.linalg.norm(h)))
    w, v = _complex_basis_from_embedding(w2, v2, n, scale)
    return EigDecomposition(w, v)


def lambda_max(m: np.ndarray) -> float:
    return float(hermitian_eig(m).eigenvalues[-1])


def cholesky_psd(m: np.ndarray) -> np.ndarray:
    """Factor F with F @ F^H = M for a positive semidefinite M.

    Uses Cholesky when M is numerically definite and otherwise an eigenvalue
    factorization with negative eigenvalues clipped to zero.
    """
    m = np.asarray(m)
    if not is_hermitian(m):
        raise DomainError("matrix is not Hermitian")
    fro = float(np.linalg.norm(m))
    if fro == 0.0:
        return np.zeros_like(m)
    try:
        f = np.linalg.cholesky(m)
        if np.all(np.isfinite(f)) and np.linalg.norm(f @ f.conj().T - m) <= 1e-12 * fro:
            return f
    except np.linalg.LinAlgError:
        pass
    dec = hermitian_eig(m)
    if dec.eigenvalues[0] < -1e-10 * fro:
        raise DomainError(f"matrix is indefinite (smallest eigenvalue {dec.eigenvalues[0]:.3e})")
    lam = np.clip(dec.eigenvalues, 0.0, None)
    return dec.eigenvectors * np.sqrt(lam)


# -- incomplete gamma and chi-square -------------------------------------------------

_EPS = 1e-16
_TINY = 1e-300


def _gamma_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    """Upper regularized gamma Q(a, x) by modified Lentz continued fraction."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise DomainError("shape must be positive")
    if x < 0:
        raise DomainError("argument must be nonnegative")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), accurate in the tail."""
    if a <= 0:
        raise DomainError("shape must be positive")
    if x < 0:
        raise DomainError("argument must be nonnegative")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_cdf(x: float, m: int) -> float:
    if x <= 0.0:
        return 0.0
    return gammainc_lower(0.5 * m, 0.5 * x)


def _chi2_logpdf(x: float, m: int) -> float:
    k = 0.5 * m
    return (k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k)


def chi2_inv_cdf(m: int, p: float) -> float:
    """Quantile of the chi-square law with m degrees of freedom.

    Safeguarded Newton on log P(x) - log p below the median and on
    log Q(x) - log(1 - p) above it, so both tails keep relative accuracy.
    Steps leaving the current bracket fall back to bisection.
    """
    if int(m) != m or m < 1:
        raise DomainError("degrees of freedom must be a positive integer")
    if not 0.0 < p < 1.0:
        raise DomainError("probability must lie in (0, 1)")
    m = int(m)
    a = 0.5 * m
    upper = p > 0.5
    target = math.log1p(-p) if upper else math.log(p)

    def resid(x):
        if upper:
            return math.log(max(gammainc_upper(a, 0.5 * x), _TINY)) - target
        return math.log(max(gammainc_lower(a, 0.5 * x), _TINY)) - target

    lo, hi = 0.0, max(1.0, float(m))
    while chi2_cdf(hi, m) < p and (not upper or resid(hi) > 0):
        lo, hi = hi, 2.0 * hi
    # Wilson-Hilferty start, clamped into the bracket
    z = _normal_quantile(p)
    k = 2.0 / (9.0 * m)
    x = m * max(1.0 - k + z * math.sqrt(k), 1e-3) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(300):
        f = resid(x)
        # residual is increasing in x below the median and decreasing above
        if (f > 0) != upper:
            hi = x
        else:
            lo = x
        if abs(f) <= 4e-16:
            break
        tail = gammainc_upper(a, 0.5 * x) if upper else gammainc_lower(a, 0.5 * x)
        slope = math.exp(_chi2_logpdf(x, m)) / max(tail, _TINY)
        step = (-f if upper else f) / slope if slope > 0 else math.inf
        xn = x - step
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-16 * max(x, _TINY) or hi - lo <= 1e-16 * hi:
            x = xn
            break
        x = xn
    return x


def _normal_quantile(p: float) -> float:
    # Acklam's rational approximation; only seeds Newton, so ~1e-9 accuracy is ample
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    if p < 0.02425:
        q = math.sqrt(-2 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    if p > 1 - 0.02425:
        return -_normal_quantile(1 - p)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)


# -- decomposition-method constant ------------------------------------------------------

def solve_theta_bar(rho: float) -> float:
    """Root in (0, 1) of theta + ln(1 - theta) = ln(rho), by bisection.

    The left side decreases strictly from 0 to -inf on (0, 1), so the root is
    unique for every rho in (0, 1). Bisection runs to float resolution.
    """
    if not 0.0 < rho < 1.0:
        raise DomainError("rho must lie in (0, 1)")
    target = math.log(rho)
    lo, hi = 0.0, 1.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if mid + math.log1p(-mid) > target:
            lo = mid
        else:
            hi = mid
    # pick whichever endpoint has the smaller residual
    return min((lo, hi), key=lambda t: abs(t + math.log1p(-t) - target) if t < 1.0 else math.inf)


def theta_bar_approx(rho: float) -> float:
    """Closed-form small-rho approximation 1 - exp(ln(rho) - 1)."""
    return 1.0 - math.exp(math.log(rho) - 1.0)

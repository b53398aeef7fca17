"""Problem instances, CSI error models, random streams and SINR evaluation.

Random streams
--------------
Every random draw goes through :func:`stream`, which builds a counter-based
Philox generator keyed by ``(seed, *keys)`` via :class:`numpy.random.SeedSequence`.
Experiments key streams by purpose, trial index and user index, so results do
not depend on the order trials are scheduled in.

Instance files
--------------
JSON objects with keys::

    n_t, k                     antenna and user counts
    sigma2[k]                  noise powers (linear)
    gamma_db[k]                SINR targets in dB
    rho[k]                     outage caps in (0, 1]
    channels[k][2 n_t]         presumed channels, interleaved re, im, re, im, ...
    error_model                {"type": "gaussian", "sigma_e2": s, "correlation": c}
                               | {"type": "gaussian", "covariances": [k][n_t][2 n_t]}
                               | {"type": "uniform", "epsilon": e or [k]}

``correlation`` c gives [C]_{mn} = sigma_e2 * c^|m-n| (c = 0 is i.i.d.).
Explicit covariances use the same interleaved row layout as channels.
Floats are written with ``repr`` precision so a round trip is exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .numerics import DomainError, cholesky_psd, is_hermitian


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent reproducible generator for the key path (seed, *keys)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    """CN(0, 1) samples: real and imaginary parts N(0, 1/2)."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) * math.sqrt(0.5)


# -- error models -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GaussianCov:
    """e_i ~ CN(0, C_i)."""

    covariances: tuple[np.ndarray, ...]
    # generator parameters, kept so instance files stay compact
    sigma_e2: float | None = field(default=None, compare=False)
    correlation: float | None = field(default=None, compare=False)

    def __post_init__(self):
        for c in self.covariances:
            if not is_hermitian(c):
                raise DomainError("error covariance must be Hermitian")
        object.__setattr__(self, "_factors", tuple(cholesky_psd(np.asarray(c, dtype=complex))
                                                   for c in self.covariances))

    @property
    def factors(self) -> tuple[np.ndarray, ...]:
        """F_i with F_i F_i^H = C_i."""
        return self._factors  # type: ignore[attr-defined]

    @classmethod
    def iid(cls, sigma_e2: float, n_t: int, k: int) -> "GaussianCov":
        return cls.correlated(sigma_e2, 0.0, n_t, k)

    @classmethod
    def correlated(cls, sigma_e2: float, corr: float, n_t: int, k: int) -> "GaussianCov":
        idx = np.arange(n_t)
        c = sigma_e2 * np.power(float(corr), np.abs(idx[:, None] - idx[None, :])).astype(complex)
        return cls(tuple(c.copy() for _ in range(k)), sigma_e2=float(sigma_e2), correlation=float(corr))


@dataclass(frozen=True)
class UniformIID:
    """Re and Im of every error entry i.i.d. uniform on [-eps_i, eps_i]."""

    epsilons: tuple[float, ...]

    def __post_init__(self):
        if any(not e > 0 for e in self.epsilons):
            raise DomainError("uniform error bounds must be positive")

    @classmethod
    def common(cls, epsilon: float, k: int) -> "UniformIID":
        return cls(tuple(float(epsilon) for _ in range(k)))


ErrorModel = Union[GaussianCov, UniformIID]


# -- instances ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BeamformingInstance:
    channels: np.ndarray          # (K, N_t) presumed channels h_bar_i as rows
    noise_powers: np.ndarray      # (K,)
    sinr_targets: np.ndarray      # (K,) linear
    outage_caps: np.ndarray       # (K,)
    error_model: ErrorModel
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.channels, dtype=complex))
        object.__setattr__(self, "channels", h)
        k = h.shape[0]
        for name in ("noise_powers", "sinr_targets", "outage_caps"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (k,)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        h.setflags(write=False)
        if k < 1:
            raise DomainError("need at least one user")
        if np.any(self.noise_powers <= 0):
            raise DomainError("noise powers must be positive")
        if np.any(self.sinr_targets <= 0):
            raise DomainError("SINR targets must be positive")
        if np.any((self.outage_caps <= 0) | (self.outage_caps > 1)):
            raise DomainError("outage caps must lie in (0, 1]")
        em = self.error_model
        size = len(em.covariances) if isinstance(em, GaussianCov) else len(em.epsilons)
        if size != k:
            raise DomainError(f"error model covers {size} users, instance has {k}")
        if isinstance(em, GaussianCov) and any(c.shape != (self.n_t, self.n_t) for c in em.covariances):
            raise DomainError("covariance shape does not match antenna count")

    @property
    def n_t(self) -> int:
        return self.channels.shape[1]

    @property
    def k(self) -> int:
        return self.channels.shape[0]

    @property
    def gaussian(self) -> bool:
        return isinstance(self.error_model, GaussianCov)

    def with_targets(self, sinr_targets=None, outage_caps=None) -> "BeamformingInstance":
        return BeamformingInstance(
            self.channels,
            self.noise_powers,
            self.sinr_targets if sinr_targets is None else sinr_targets,
            self.outage_caps if outage_caps is None else outage_caps,
            self.error_model,
            dict(self.meta),
        )

    # -- serialization --------------------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "n_t": self.n_t,
            "k": self.k,
            "sigma2": [float(v) for v in self.noise_powers],
            "gamma_db": [float(v) for v in linear_to_db(self.sinr_targets)],
            "gamma_linear": [float(v) for v in self.sinr_targets],
            "rho": [float(v) for v in self.outage_caps],
            "channels": [interleave(h) for h in self.channels],
        }
        em = self.error_model
        if isinstance(em, GaussianCov) and em.sigma_e2 is not None:
            out["error_model"] = {"type": "gaussian", "sigma_e2": em.sigma_e2,
                                  "correlation": em.correlation or 0.0}
        elif isinstance(em, GaussianCov):
            out["error_model"] = {"type": "gaussian",
                                  "covariances": [[interleave(row) for row in c] for c in em.covariances]}
        else:
            out["error_model"] = {"type": "uniform", "epsilon": [float(e) for e in em.epsilons]}
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BeamformingInstance":
        n_t, k = int(d["n_t"]), int(d["k"])
        known = {"n_t", "k", "sigma2", "gamma_db", "gamma_linear", "rho", "channels", "error_model", "meta"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown instance keys: {sorted(unknown)}")
        channels = np.array([deinterleave(row) for row in d["channels"]]).reshape(k, n_t)
        # the linear value is authoritative when present (dB text loses bits)
        gamma = np.asarray(d["gamma_linear"]) if "gamma_linear" in d else db_to_linear(d["gamma_db"])
        em = d["error_model"]
        kind = em.get("type")
        if kind == "gaussian":
            if "covariances" in em:
                covs = tuple(np.array([deinterleave(r) for r in c]) for c in em["covariances"])
                model: ErrorModel = GaussianCov(covs)
            else:
                model = GaussianCov.correlated(float(em["sigma_e2"]), float(em.get("correlation", 0.0)), n_t, k)
        elif kind == "uniform":
            eps = em["epsilon"]
            model = UniformIID(tuple(float(e) for e in eps)) if isinstance(eps, list) else UniformIID.common(eps, k)
        else:
            raise ValueError(f"unknown error model type {kind!r}")
        return cls(channels, np.asarray(d["sigma2"], float), gamma, np.asarray(d["rho"], float), model,
                   dict(d.get("meta", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "BeamformingInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def interleave(v: np.ndarray) -> list[float]:
    v = np.asarray(v, dtype=complex)
    out = np.empty(2 * v.size)
    out[0::2] = v.real
    out[1::2] = v.imag
    return [float(x) for x in out]


def deinterleave(vals) -> np.ndarray:
    a = np.asarray(vals, dtype=float)
    if a.size % 2:
        raise ValueError("interleaved array must have even length")
    return a[0::2] + 1j * a[1::2]


@dataclass(frozen=True, eq=False)
class BeamformerSet:
    """Per-user beamforming vectors w_i as rows of a (K, N_t) array."""

    vectors: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.vectors, dtype=complex)).copy()
        if not np.all(np.isfinite(w)):
            raise ValueError("beamformers must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "vectors", w)

    @property
    def powers(self) -> np.ndarray:
        return np.sum(np.abs(self.vectors) ** 2, axis=1)

    @property
    def total_power(self) -> float:
        return float(np.sum(self.powers))

    def covariances(self) -> list[np.ndarray]:
        return [np.outer(w, w.conj()) for w in self.vectors]

    def to_dict(self) -> dict:
        return {"k": self.vectors.shape[0], "n_t": self.vectors.shape[1],
                "beamformers": [interleave(w) for w in self.vectors]}

    @classmethod
    def from_dict(cls, d: dict) -> "BeamformerSet":
        return cls(np.array([deinterleave(r) for r in d["beamformers"]]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "BeamformerSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- generation and sampling ----------------------------------------------------------

def generate_channels(n_t: int, k: int, seed: int, *keys: int) -> np.ndarray:
    """K i.i.d. CN(0, I) presumed channels (rows), reproducible from the key path."""
    if n_t < 1 or k < 1:
        raise DomainError("need n_t >= 1 and k >= 1")
    return complex_normal(stream(seed, *keys), (k, n_t))


def make_instance(channels, gamma_db, rho, error_model: ErrorModel, sigma2=0.1) -> BeamformingInstance:
    channels = np.atleast_2d(channels)
    k = channels.shape[0]
    return BeamformingInstance(channels, np.full(k, sigma2, float) if np.isscalar(sigma2) else sigma2,
                               db_to_linear(np.broadcast_to(gamma_db, (k,))),
                               np.broadcast_to(np.asarray(rho, float), (k,)), error_model)


def sample_errors(model: ErrorModel, rng: np.random.Generator, size: int | None = None,
                  n_t: int | None = None) -> np.ndarray:
    """Draw CSI errors.

    Returns shape (K, N_t) for ``size=None`` or (size, K, N_t) otherwise.
    ``n_t`` is required for the uniform model, which does not carry it.
    """
    shape_n = None if size is None else int(size)
    if isinstance(model, GaussianCov):
        factors = model.factors
        k, nt = len(factors), factors[0].shape[0]
        z = complex_normal(rng, (shape_n or 1, k, nt))
        e = np.einsum("kij,skj->ski", np.stack(factors), z)
    elif isinstance(model, UniformIID):
        if n_t is None:
            raise ValueError("n_t is required for the uniform error model")
        eps = np.asarray(model.epsilons)[None, :, None]
        k = eps.shape[1]
        re = rng.uniform(-1.0, 1.0, (shape_n or 1, k, n_t))
        im = rng.uniform(-1.0, 1.0, (shape_n or 1, k, n_t))
        e = eps * (re + 1j * im)
    else:
        raise TypeError(f"unsupported error model {type(model).__name__}")
    return e[0] if size is None else e


def sinr(w: BeamformerSet | np.ndarray, h_i: np.ndarray, sigma2_i: float, i: int) -> np.ndarray:
    """SINR of user i, |h_i^H w_i|^2 / (sum_{k != i} |h_i^H w_k|^2 + sigma_i^2).

    ``h_i`` may be one channel (N_t,) or a batch (S, N_t); the result has the
    matching shape () or (S,). Scaling every w by c scales signal and
    interference by |c|^2 but not the noise, so SINR is not scale invariant.
    """
    wv = w.vectors if isinstance(w, BeamformerSet) else np.atleast_2d(np.asarray(w, dtype=complex))
    h = np.asarray(h_i, dtype=complex)
    if h.shape[-1] != wv.shape[1]:
        raise ValueError(f"channel length {h.shape[-1]} does not match beamformer length {wv.shape[1]}")
    if not 0 <= i < wv.shape[0]:
        raise ValueError("user index out of range")
    if sigma2_i <= 0:
        raise DomainError("noise power must be positive")
    gains = np.abs(h.conj() @ wv.T) ** 2  # (..., K)
    signal = gains[..., i]
    interference = gains.sum(axis=-1) - signal
    return signal / (interference + sigma2_i)


def all_sinr(w: BeamformerSet, channels: np.ndarray, noise_powers) -> np.ndarray:
    """SINR for every user; channels of shape (K, N_t) or (S, K, N_t)."""
    h = np.asarray(channels)
    out = [sinr(w, h[..., i, :], float(noise_powers[i]), i) for i in range(w.vectors.shape[0])]
    return np.stack(out, axis=-1)

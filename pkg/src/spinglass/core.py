"""Model specification, covariance mixtures, disorder sampling, RNG streams.

Conventions used throughout the package:

* a configuration is a +-1 vector of length N (single-type) or 2N
  (bipartite, layer 1 first);
* the random field H(sigma) is centered Gaussian with covariance
  N * xi(sigma.tau/N) for single-type models and
  N * (s1.t1/N)(s2.t2/N) for the bipartite model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "MixtureFunction",
    "ModelSpec",
    "CouplingSample",
    "RandomStream",
    "xi_eval",
    "xi_prime",
    "xi_dual",
    "sample_couplings",
    "expected_covariance",
]

_MIX64 = 0x9E3779B97F4A7C15  # golden-ratio multiplier for substream ids


@dataclass(frozen=True)
class MixtureFunction:
    """Covariance mixture xi(r) = sum_p a_p r^p, p >= 1, all a_p >= 0.

    The constant term is fixed to zero so that xi(0) = 0; xi is then
    automatically nondecreasing and convex on [0, inf).
    """

    coefficients: tuple  # (a_1, a_2, ..., a_P)

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        if any(not np.isfinite(a) for a in coeffs):
            raise ValueError("mixture coefficients must be finite")
        if any(a < 0 for a in coeffs):
            raise ValueError("mixture coefficients must be nonnegative")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def sk(cls) -> "MixtureFunction":
        """xi(r) = r^2, the SK covariance."""
        return cls((0.0, 1.0))

    @classmethod
    def pure(cls, p: int, a: float = 1.0) -> "MixtureFunction":
        if p < 1:
            raise ValueError("p must be >= 1")
        return cls((0.0,) * (p - 1) + (float(a),))

    @property
    def degrees(self):
        """Degrees p with a_p > 0, ascending."""
        return [p for p, a in enumerate(self.coefficients, start=1) if a > 0]

    def __call__(self, r):
        return xi_eval(self, r)

    def prime(self, r):
        return xi_prime(self, r)

    def xi_one(self) -> float:
        return float(sum(self.coefficients))

    def is_degenerate(self) -> bool:
        return all(a == 0 for a in self.coefficients)


def xi_eval(m: MixtureFunction, r):
    """Evaluate xi(r) = sum_p a_p r^p (vectorized in r)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    for p, a in enumerate(m.coefficients, start=1):
        if a != 0.0:
            out = out + a * r**p
    return out if out.ndim else float(out)


def xi_prime(m: MixtureFunction, r):
    """Evaluate xi'(r) = sum_p p a_p r^(p-1) (vectorized in r)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    for p, a in enumerate(m.coefficients, start=1):
        if a != 0.0:
            out = out + p * a * r ** (p - 1)
    return out if out.ndim else float(out)


def xi_dual(m: MixtureFunction, s: float) -> float:
    """Convex dual xi*(s) = sup_{r>=0} (r s - xi(r)).

    For s <= xi'(0) = a_1 the supremum sits at r = 0 and the dual is 0.
    Otherwise the concave objective has a unique stationary point solving
    xi'(r) = s, found by bracketed root finding.
    """
    if not np.isfinite(s):
        raise ValueError("s must be finite")
    if m.is_degenerate():
        if s > 0:
            raise ValueError("dual is infinite: degenerate mixture with s > 0")
        return 0.0
    a1 = m.coefficients[0]
    if s <= a1:
        return 0.0
    if len(m.coefficients) == 1:
        # purely linear mixture cannot absorb slopes above a_1
        raise ValueError("dual is infinite: linear mixture with s > a_1")
    hi = 1.0
    while xi_prime(m, hi) < s:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("dual is infinite: xi' never reaches s")
    r_star = brentq(lambda r: xi_prime(m, r) - s, 0.0, hi, xtol=1e-14, rtol=1e-15)
    return float(r_star * s - xi_eval(m, r_star))


@dataclass(frozen=True)
class ModelSpec:
    """What model to simulate: kind, size, and (single-type) mixture.

    kind is one of "sk", "mixture", "bipartite".  The spin domain is
    {-1,+1}; bipartite configurations have total length 2N.
    """

    kind: str
    N: int
    mixture: Optional[MixtureFunction] = None

    def __post_init__(self):
        if self.kind not in ("sk", "mixture", "bipartite"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.kind == "mixture":
            if self.mixture is None:
                raise ValueError("mixture kind requires a MixtureFunction")
        elif self.kind == "sk" and self.mixture is None:
            object.__setattr__(self, "mixture", MixtureFunction.sk())

    @property
    def config_length(self) -> int:
        return 2 * self.N if self.kind == "bipartite" else self.N

    @property
    def is_bipartite(self) -> bool:
        return self.kind == "bipartite"


@dataclass(frozen=True)
class CouplingSample:
    """One realization of the Gaussian disorder.

    kind "sk"/"bipartite": W is an N x N matrix of iid standard Gaussians.
    kind "mixture": tensors[k] is an order-p_k tensor of iid standard
    Gaussians with weight sqrt(a_{p_k}); the induced field is
    H(sigma) = sum_k sqrt(a_{p_k}) N^{(1-p_k)/2} <J_k, sigma^{p_k}>.
    """

    kind: str
    N: int
    W: Optional[np.ndarray] = None
    tensors: tuple = ()          # ((p, weight, ndarray), ...)
    mixture: Optional[MixtureFunction] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.kind in ("sk", "bipartite"):
            if self.W is None or self.W.shape != (self.N, self.N):
                raise ValueError("W must be an N x N matrix")
            if not np.all(np.isfinite(self.W)):
                raise ValueError("couplings must be finite")
        elif self.kind == "mixture":
            for p, _, J in self.tensors:
                if J.shape != (self.N,) * p:
                    raise ValueError("tensor dimensions must all equal N")
                if not np.all(np.isfinite(J)):
                    raise ValueError("couplings must be finite")
        else:
            raise ValueError(f"unknown sample kind {self.kind!r}")

    @property
    def config_length(self) -> int:
        return 2 * self.N if self.kind == "bipartite" else self.N

    def xi_one(self) -> float:
        """xi(1), the per-spin variance scale; 1 for SK and bipartite."""
        if self.kind == "bipartite":
            return 1.0
        return self.mixture.xi_one() if self.mixture is not None else 1.0


def _mix_id(stream_id: int, i: int) -> int:
    return (stream_id * _MIX64 + i + 1) & 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class RandomStream:
    """Deterministic seeded stream with independent substreams.

    Same (seed, stream_id) gives an identical value sequence within one
    build; substreams from split() are statistically independent.  A
    single substream must not be shared across concurrent tasks.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.default_rng(ss)

    def substream(self, i: int) -> "RandomStream":
        return RandomStream(self.seed, _mix_id(self.stream_id, i))

    def split(self, n: int):
        return [self.substream(i) for i in range(n)]

    def integer_seed(self) -> int:
        """A derived 32-bit seed for external kernels (numba RNG)."""
        return int(self.generator().integers(0, 2**31 - 1))


def sample_couplings(spec: ModelSpec, rng: RandomStream) -> CouplingSample:
    """Draw one disorder realization for the given model."""
    gen = rng.generator()
    if spec.kind in ("sk", "bipartite"):
        W = gen.standard_normal((spec.N, spec.N))
        return CouplingSample(
            kind=spec.kind, N=spec.N, W=W,
            mixture=spec.mixture if spec.kind == "sk" else None,
        )
    tensors = []
    for p, a in enumerate(spec.mixture.coefficients, start=1):
        if a > 0:
            J = gen.standard_normal((spec.N,) * p)
            tensors.append((p, float(np.sqrt(a)), J))
    return CouplingSample(kind="mixture", N=spec.N, tensors=tuple(tensors),
                          mixture=spec.mixture)


def expected_covariance(spec: ModelSpec, sigma: np.ndarray, tau: np.ndarray) -> float:
    """E[H(sigma) H(tau)] from the model covariance.

    Single-type: N xi(sigma.tau/N); bipartite: N (s1.t1/N)(s2.t2/N).
    """
    sigma = np.asarray(sigma, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if sigma.shape != (spec.config_length,) or tau.shape != (spec.config_length,):
        raise ValueError("configuration length does not match model spec")
    N = spec.N
    if spec.is_bipartite:
        o1 = sigma[:N] @ tau[:N] / N
        o2 = sigma[N:] @ tau[N:] / N
        return float(N * o1 * o2)
    return float(N * xi_eval(spec.mixture, sigma @ tau / N))

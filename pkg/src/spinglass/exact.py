"""Finite-N ground truth: Hamiltonians, enumeration and Monte-Carlo free
energies, maxima, replica moments, and quadrature-verified derivative
identities.

All partition sums go through log-sum-exp with max subtraction; the
bipartite enumeration sums one layer in a vectorized inner pass so the
4^N sum costs 2^N * N.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .core import (
    CouplingSample,
    ModelSpec,
    RandomStream,
    expected_covariance,
    sample_couplings,
    xi_eval,
)

__all__ = [
    "ENUM_CAP_SINGLE",
    "ENUM_CAP_BIPARTITE",
    "FreeEnergyEstimate",
    "EnrichedParams",
    "hamiltonian",
    "hamiltonian_all",
    "all_configs",
    "free_energy_sample",
    "mean_free_energy",
    "max_energy",
    "enriched_free_energy_sample",
    "replica_moment_exact",
    "derivative_identity_check",
    "DerivativeCheck",
]

ENUM_CAP_SINGLE = 20     # 2^N terms
ENUM_CAP_BIPARTITE = 13  # 4^N terms, inner layer factorized


@dataclass(frozen=True)
class FreeEnergyEstimate:
    mean: float
    std_error: float
    n_samples: int
    N: int
    parameters: tuple

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class EnrichedParams:
    """Parameters (t, h) of the enriched free energy plus the drawn
    external field z (length N single-type, 2N bipartite)."""

    t: float
    h: Tuple[float, ...]  # (h,) or (h1, h2)
    z: np.ndarray

    def __post_init__(self):
        if self.t < 0 or any(hv < 0 for hv in self.h):
            raise ValueError("t and h must be nonnegative")


@lru_cache(maxsize=8)
def all_configs(N: int) -> np.ndarray:
    """All 2^N configurations as a (2^N, N) float +-1 array."""
    bits = (np.arange(2**N)[:, None] >> np.arange(N)[None, :]) & 1
    return (2.0 * bits - 1.0).astype(float)


def _contract_pspin(J: np.ndarray, S: np.ndarray, p: int) -> np.ndarray:
    """sum_{i1..ip} J_{i1..ip} S[b,i1]...S[b,ip] for each row b of S."""
    N = S.shape[1]
    out = S @ J.reshape(N, -1)  # (B, N^{p-1})
    for _ in range(p - 1):
        out = np.einsum("bi,bij->bj", S, out.reshape(S.shape[0], N, -1))
    return out.reshape(-1)


def hamiltonian(c: CouplingSample, sigma: np.ndarray) -> float:
    """Evaluate H(sigma) for one configuration."""
    return float(hamiltonian_all(c, np.asarray(sigma, dtype=float)[None, :])[0])


def hamiltonian_all(c: CouplingSample, S: np.ndarray) -> np.ndarray:
    """Evaluate H on a batch of configurations (rows of S)."""
    N = c.N
    if S.ndim != 2 or S.shape[1] != c.config_length:
        raise ValueError("configuration length does not match sample")
    if c.kind == "sk":
        return np.einsum("bi,ij,bj->b", S, c.W, S) / np.sqrt(N)
    if c.kind == "bipartite":
        return np.einsum("bi,ij,bj->b", S[:, :N], c.W, S[:, N:]) / np.sqrt(N)
    out = np.zeros(S.shape[0])
    for p, weight, J in c.tensors:
        out += weight * N ** ((1 - p) / 2) * _contract_pspin(J, S, p)
    return out


def _check_enum_cap(c: CouplingSample):
    cap = ENUM_CAP_BIPARTITE if c.kind == "bipartite" else ENUM_CAP_SINGLE
    if c.N > cap:
        raise ValueError(f"enumeration too large: N={c.N} exceeds cap {cap}")


def free_energy_sample(c: CouplingSample, beta: float) -> float:
    """(1/N) log sum_sigma exp(beta H(sigma)) by exact enumeration."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    _check_enum_cap(c)
    N = c.N
    if c.kind == "bipartite":
        # sum over layer 2 factorizes given sigma_1: prod_j 2cosh(beta row_j)
        S1 = all_configs(N)
        rows = (S1 @ c.W) / np.sqrt(N)  # (2^N, N)
        inner = np.sum(_log2cosh(beta * rows), axis=1)
        return float(logsumexp(inner) / N)
    S = all_configs(N)
    H = hamiltonian_all(c, S)
    return float(logsumexp(beta * H) / N)


def _log2cosh(x):
    return np.abs(x) + np.log1p(np.exp(-2.0 * np.abs(x)))


def mean_free_energy(spec: ModelSpec, beta: float, n_samples: int,
                     rng: RandomStream, n_jobs: int = 1) -> FreeEnergyEstimate:
    """Mean and standard error of free_energy_sample over iid disorder.

    Replica i always uses substream i, and the reduction runs in index
    order, so the result is independent of n_jobs.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")

    def one(i: int) -> float:
        c = sample_couplings(spec, rng.substream(i))
        return free_energy_sample(c, beta)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            values = np.array(list(pool.map(one, range(n_samples))))
    else:
        values = np.array([one(i) for i in range(n_samples)])
    return FreeEnergyEstimate(
        mean=float(values.mean()),
        std_error=float(values.std(ddof=1) / np.sqrt(n_samples)),
        n_samples=n_samples,
        N=spec.N,
        parameters=(beta,),
    )


def _greedy_argmax(c: CouplingSample) -> np.ndarray:
    """Fix spins sequentially, each maximizing the partial sum (unassigned
    spins contribute nothing since H is a polynomial with no constant)."""
    n = c.config_length
    sigma = np.zeros(n)
    for i in range(n):
        sigma[i] = 1.0
        up = hamiltonian(c, sigma)
        sigma[i] = -1.0
        down = hamiltonian(c, sigma)
        sigma[i] = 1.0 if up >= down else -1.0
    return sigma


def _local_search_argmax(c: CouplingSample, start: Optional[np.ndarray] = None) -> np.ndarray:
    """Flip the single best spin until no flip improves H."""
    n = c.config_length
    sigma = np.ones(n) if start is None else np.array(start, dtype=float)
    current = hamiltonian(c, sigma)
    while True:
        cand = np.tile(sigma, (n, 1))
        cand[np.arange(n), np.arange(n)] *= -1.0
        values = hamiltonian_all(c, cand)
        best = int(np.argmax(values))
        if values[best] <= current + 1e-15:
            return sigma
        sigma = cand[best]
        current = values[best]


def max_energy(c: CouplingSample, method: str = "exhaustive"):
    """(1/N) max H and a maximizing (or locally maximal) configuration."""
    N = c.N
    if method == "exhaustive":
        _check_enum_cap(c)
        if c.kind == "bipartite":
            S1 = all_configs(N)
            rows = (S1 @ c.W) / np.sqrt(N)
            vals = np.sum(np.abs(rows), axis=1)  # optimal sigma_2 = sign(rows)
            a = int(np.argmax(vals))
            s2 = np.sign(rows[a])
            s2[s2 == 0] = 1.0
            sigma = np.concatenate([S1[a], s2])
            return float(vals[a] / N), sigma
        S = all_configs(N)
        H = hamiltonian_all(c, S)
        a = int(np.argmax(H))
        return float(H[a] / N), S[a].copy()
    if method == "greedy":
        sigma = _greedy_argmax(c)
    elif method == "local_search":
        sigma = _local_search_argmax(c)
    else:
        raise ValueError(f"unknown method {method!r}")
    return hamiltonian(c, sigma) / N, sigma


def enriched_free_energy_sample(c: CouplingSample, p: EnrichedParams) -> float:
    """-(1/N) log sum_sigma exp(sqrt(2t) H - N t xi(1) + field terms).

    Note the leading minus sign; at t = h = 0 the value is -log 2
    (single-type) resp. -2 log 2 (bipartite).
    """
    _check_enum_cap(c)
    N = c.N
    t = p.t
    st = np.sqrt(2.0 * t)
    if c.kind == "bipartite":
        if len(p.h) != 2 or p.z.shape != (2 * N,):
            raise ValueError("bipartite enriched params need (h1,h2) and z of length 2N")
        h1, h2 = p.h
        z1, z2 = p.z[:N], p.z[N:]
        S1 = all_configs(N)
        rows = st * (S1 @ c.W) / np.sqrt(N) + np.sqrt(2.0 * h2) * z2[None, :]
        inner = (np.sqrt(2.0 * h1) * (S1 @ z1)
                 + np.sum(_log2cosh(rows), axis=1))
        return float(-(logsumexp(inner) - N * t - N * h1 - N * h2) / N)
    if len(p.h) != 1 or p.z.shape != (N,):
        raise ValueError("single-type enriched params need (h,) and z of length N")
    (h,) = p.h
    S = all_configs(N)
    expo = st * hamiltonian_all(c, S) + np.sqrt(2.0 * h) * (S @ p.z)
    return float(-(logsumexp(expo) - N * t * c.xi_one() - N * h) / N)


def replica_moment_exact(spec: ModelSpec, beta: float, n: int) -> float:
    """(1/N) log E[Z^n] via the Gaussian moment identity.

    E exp(beta sum_a H(sigma^a)) = exp((beta^2/2) sum_{a,b} N xi(o_ab))
    with o_ab the overlap of replicas a and b (o_aa = 1).
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    if spec.is_bipartite:
        raise NotImplementedError("replica moments implemented for single-type models")
    if n * spec.N > 24:
        raise ValueError(f"enumeration too large: 2^(n N) with n N = {n * spec.N}")
    N = spec.N
    S = all_configs(N)
    xiO = N * xi_eval(spec.mixture, (S @ S.T) / N)  # (2^N, 2^N)
    scale = beta**2 / 2.0
    expo = np.full((2**N,) * n, scale * n * N * spec.mixture.xi_one())
    for a in range(n):
        for b in range(a + 1, n):
            shape = [1] * n
            shape[a] = 2**N
            shape[b] = 2**N
            expo = expo + 2.0 * scale * xiO.reshape(shape)
    return float(logsumexp(expo.ravel()) / N)


@dataclass(frozen=True)
class DerivativeCheck:
    residual_t: float
    residual_h: float
    dF_dt: float
    dF_dh: float
    gibbs_t_term: float
    gibbs_h_term: float
    overlap_variance: float


def _gauss_hermite_normal(order: int):
    """Nodes/weights so that E f(Z) = sum w_i f(x_i) for Z ~ N(0,1)."""
    x, w = np.polynomial.hermite.hermgauss(order)
    return x * np.sqrt(2.0), w / np.sqrt(np.pi)


def _field_factors(spec: ModelSpec) -> np.ndarray:
    """Factor B with H(configs) = B g, g iid standard normal, built from
    the eigendecomposition of the exact covariance over all configurations.

    The rank is what sets the quadrature dimension: 2 for SK at N=2,
    1 for the bipartite model at N=1.
    """
    S = all_configs(spec.config_length)
    M = S.shape[0]
    C = np.empty((M, M))
    for a in range(M):
        for b in range(a, M):
            C[a, b] = C[b, a] = expected_covariance(spec, S[a], S[b])
    evals, evecs = np.linalg.eigh(C)
    keep = evals > 1e-10 * max(evals.max(), 1.0)
    return evecs[:, keep] * np.sqrt(evals[keep])[None, :]


def derivative_identity_check(spec: ModelSpec, t: float, h, quad_order: int,
                              fd_step: float = 1e-4) -> DerivativeCheck:
    """Check d/dt F = E<xi(overlap)> and d/dh F = E<overlap> by full
    tensor-product Gauss-Hermite quadrature over all Gaussian inputs.

    Restricted to N <= 2 (single-type) or N = 1 per layer (bipartite);
    derivatives by Richardson-extrapolated central differences.
    """
    if quad_order < 5:
        raise ValueError("quadrature order < 5 rejected")
    if spec.is_bipartite:
        if spec.N != 1:
            raise ValueError("bipartite check requires N = 1 per layer")
        h = tuple(float(v) for v in np.atleast_1d(h))
        if len(h) == 1:
            h = (h[0], h[0])
    else:
        if spec.N > 2:
            raise ValueError("single-type check requires N <= 2")
        h = (float(np.atleast_1d(h)[0]),)

    S = all_configs(spec.config_length)
    B = _field_factors(spec)             # (M, r)
    n_z = spec.config_length
    r = B.shape[1]
    dims = r + n_z
    if quad_order**dims > 4 * 10**8:
        raise ValueError("quadrature grid too large for this model size")
    x1, w1 = _gauss_hermite_normal(quad_order)

    N = spec.N
    total = quad_order**dims
    strides = [quad_order ** (dims - 1 - d) for d in range(dims)]
    block = 1 << 20

    def _node_block(lo):
        idx = np.arange(lo, min(lo + block, total))
        coords = np.empty((len(idx), dims))
        wblk = np.ones(len(idx))
        for d in range(dims):
            j = (idx // strides[d]) % quad_order
            coords[:, d] = x1[j]
            wblk *= w1[j]
        return coords, wblk

    def exponent(tv, hv, coords):
        H_blk = coords[:, :r] @ B.T  # (n, M)
        Z_blk = coords[:, r:]
        e = np.sqrt(2.0 * tv) * H_blk - N * tv * _xi_one(spec)
        if spec.is_bipartite:
            e = e + np.sqrt(2.0 * hv[0]) * Z_blk[:, :1] * S[:, 0][None, :]
            e = e + np.sqrt(2.0 * hv[1]) * Z_blk[:, 1:] * S[:, 1][None, :]
            e = e - N * (hv[0] + hv[1])
        else:
            e = e + np.sqrt(2.0 * hv[0]) * (Z_blk @ S.T) - N * hv[0]
        return e

    def F(tv, hv):
        acc = 0.0
        for lo in range(0, total, block):
            coords, wblk = _node_block(lo)
            acc += wblk @ logsumexp(exponent(tv, hv, coords), axis=1)
        return float(-acc / N)

    def gibbs_terms(tv, hv):
        M = S.shape[0]
        gram = np.zeros((M, M))  # sum_nodes w * pi_a pi_b
        for lo in range(0, total, block):
            coords, wblk = _node_block(lo)
            e = exponent(tv, hv, coords)
            pi = np.exp(e - logsumexp(e, axis=1, keepdims=True))
            gram += (pi * wblk[:, None]).T @ pi
        O = (S @ S.T) / N
        if spec.is_bipartite:
            o1 = np.outer(S[:, 0], S[:, 0]) / N
            o2 = np.outer(S[:, 1], S[:, 1]) / N
            Gt, Gh, Gh2 = o1 * o2, o1, o2
        else:
            Gt, Gh, Gh2 = xi_eval(spec.mixture, O), O, O
        t_term = float(np.sum(gram * Gt))
        h_term = float(np.sum(gram * Gh))
        h2_term = float(np.sum(gram * Gh2))
        sq = float(np.sum(gram * (Gh * Gh2)))
        return t_term, h_term, h2_term, sq

    def derivative(f, x0):
        # F is an even analytic function of sqrt(2x), so it extends smoothly
        # to x = 0; at the boundary we differentiate the even function
        # F~(s) = F(s^2/2) instead of stepping into negative parameters.
        d = fd_step
        if x0 >= 2.5 * d:
            return (8 * (f(x0 + d) - f(x0 - d)) - (f(x0 + 2 * d) - f(x0 - 2 * d))) / (12 * d)
        if x0 == 0.0:
            # second difference of F~ at 0 with Richardson in the step
            s = max(d, 3e-3)
            f0 = f(0.0)
            coarse = 2.0 * (f(s**2 / 2.0) - f0) / s**2
            fine = 2.0 * (f(s**2 / 8.0) - f0) / (s / 2) ** 2
            return (4.0 * fine - coarse) / 3.0
        return (-3 * f(x0) + 4 * f(x0 + d) - f(x0 + 2 * d)) / (2 * d)

    dF_dt = derivative(lambda tv: F(tv, h), t)
    dF_dh = derivative(lambda hv: F(t, (hv,) + h[1:]), h[0])
    t_term, h_term, h2_term, sq = gibbs_terms(t, h)
    if spec.is_bipartite:
        variance = sq - h_term * h2_term
    else:
        variance = sq - h_term**2
    return DerivativeCheck(
        residual_t=abs(dF_dt - t_term),
        residual_h=abs(dF_dh - h_term),
        dF_dt=float(dF_dt),
        dF_dh=float(dF_dh),
        gibbs_t_term=t_term,
        gibbs_h_term=h_term,
        overlap_variance=float(variance),
    )


def _xi_one(spec: ModelSpec) -> float:
    return 1.0 if spec.is_bipartite else spec.mixture.xi_one()

"""Gibbs-measure sampling and structural statistics.

Metropolis single-flip chains (numba kernels for the matrix models, a
plain python fallback for p-spin tensors), the overlap law of two
independent replicas, ultrametric triangle-defect statistics over three
replicas, and the constrained-uniform inverse-temperature solver.

The Gibbs measure is pi(sigma) proportional to exp(beta H(sigma)); the
overlap of two replicas is sigma.sigma'/N and distances are Euclidean,
reported in units of sqrt(N).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy.optimize import brentq
from scipy.special import logsumexp

from .core import CouplingSample, RandomStream
from .exact import all_configs, hamiltonian, hamiltonian_all

__all__ = [
    "OverlapStats",
    "TripleDefectStats",
    "mcmc_chain",
    "overlap_distribution",
    "ultrametric_defects",
    "inverse_temperature",
    "total_variation",
    "incremental_delta_consistency",
]

EXACT_MOMENT_CAP = 13     # one 2^N pass for mean vector + Gram matrix
EXACT_HISTOGRAM_CAP = 10  # 4^N pair pass for the full overlap law
EXACT_TRIPLE_CAP = 8      # 8^N triple pass for defect statistics


# ---------------------------------------------------------------------------
# chain kernels

@njit(cache=True)
def _sk_chain_kernel(A, betas, n_sweeps, burn, thin, seed, do_swap, out):
    np.random.seed(seed)
    R = betas.shape[0]
    N = A.shape[0]
    sqrt_n = np.sqrt(N)
    sig = np.empty((R, N), np.int8)
    for r in range(R):
        for i in range(N):
            sig[r, i] = 1 if np.random.random() < 0.5 else -1
    f = np.zeros((R, N))
    H = np.zeros(R)
    for r in range(R):
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += A[i, j] * sig[r, j]
            f[r, i] = acc
        h = 0.0
        for i in range(N):
            h += sig[r, i] * f[r, i]
        H[r] = h / (2.0 * sqrt_n)
    rec = 0
    for s in range(n_sweeps):
        for r in range(R):
            for _ in range(N):
                # random site selection: a deterministic sweep order is
                # non-ergodic at beta = 0 (every proposal is accepted, so
                # the whole configuration just negates each sweep)
                i = np.random.randint(N)
                dh = -2.0 * sig[r, i] * (f[r, i] - A[i, i] * sig[r, i]) / sqrt_n
                if dh >= 0.0 or np.random.random() < np.exp(betas[r] * dh):
                    old = sig[r, i]
                    sig[r, i] = -old
                    H[r] += dh
                    for kk in range(N):
                        f[r, kk] -= 2.0 * old * A[kk, i]
        if do_swap:
            for r in range(R - 1):
                delta = (betas[r] - betas[r + 1]) * (H[r + 1] - H[r])
                if delta >= 0.0 or np.random.random() < np.exp(delta):
                    for i in range(N):
                        tmp8 = sig[r, i]
                        sig[r, i] = sig[r + 1, i]
                        sig[r + 1, i] = tmp8
                        tmpf = f[r, i]
                        f[r, i] = f[r + 1, i]
                        f[r + 1, i] = tmpf
                    tmph = H[r]
                    H[r] = H[r + 1]
                    H[r + 1] = tmph
        if s >= burn and (s - burn) % thin == 0:
            for i in range(N):
                out[rec, i] = sig[0, i]
            rec += 1
    return rec


@njit(cache=True)
def _bipartite_chain_kernel(W, betas, n_sweeps, burn, thin, seed, do_swap, out):
    np.random.seed(seed)
    R = betas.shape[0]
    N = W.shape[0]
    sqrt_n = np.sqrt(N)
    s1 = np.empty((R, N), np.int8)
    s2 = np.empty((R, N), np.int8)
    for r in range(R):
        for i in range(N):
            s1[r, i] = 1 if np.random.random() < 0.5 else -1
            s2[r, i] = 1 if np.random.random() < 0.5 else -1
    f1 = np.zeros((R, N))  # (W sigma2)_i, the field on layer 1
    f2 = np.zeros((R, N))  # (W^T sigma1)_j, the field on layer 2
    H = np.zeros(R)
    for r in range(R):
        for i in range(N):
            a1 = 0.0
            a2 = 0.0
            for j in range(N):
                a1 += W[i, j] * s2[r, j]
                a2 += W[j, i] * s1[r, j]
            f1[r, i] = a1
            f2[r, i] = a2
        h = 0.0
        for i in range(N):
            h += s1[r, i] * f1[r, i]
        H[r] = h / sqrt_n
    rec = 0
    for s in range(n_sweeps):
        for r in range(R):
            for _ in range(N):
                # random sites: see the single-type kernel
                i = np.random.randint(N)
                dh = -2.0 * s1[r, i] * f1[r, i] / sqrt_n
                if dh >= 0.0 or np.random.random() < np.exp(betas[r] * dh):
                    old = s1[r, i]
                    s1[r, i] = -old
                    H[r] += dh
                    for kk in range(N):
                        f2[r, kk] -= 2.0 * old * W[i, kk]
            for _ in range(N):
                i = np.random.randint(N)
                dh = -2.0 * s2[r, i] * f2[r, i] / sqrt_n
                if dh >= 0.0 or np.random.random() < np.exp(betas[r] * dh):
                    old = s2[r, i]
                    s2[r, i] = -old
                    H[r] += dh
                    for kk in range(N):
                        f1[r, kk] -= 2.0 * old * W[kk, i]
        if do_swap:
            for r in range(R - 1):
                delta = (betas[r] - betas[r + 1]) * (H[r + 1] - H[r])
                if delta >= 0.0 or np.random.random() < np.exp(delta):
                    for i in range(N):
                        t8 = s1[r, i]
                        s1[r, i] = s1[r + 1, i]
                        s1[r + 1, i] = t8
                        t8 = s2[r, i]
                        s2[r, i] = s2[r + 1, i]
                        s2[r + 1, i] = t8
                        tf = f1[r, i]
                        f1[r, i] = f1[r + 1, i]
                        f1[r + 1, i] = tf
                        tf = f2[r, i]
                        f2[r, i] = f2[r + 1, i]
                        f2[r + 1, i] = tf
                    th = H[r]
                    H[r] = H[r + 1]
                    H[r + 1] = th
        if s >= burn and (s - burn) % thin == 0:
            for i in range(N):
                out[rec, i] = s1[0, i]
                out[rec, N + i] = s2[0, i]
            rec += 1
    return rec


def _generic_chain(c: CouplingSample, beta, n_sweeps, burn, thin, seed, out):
    """Full-recompute Metropolis for p-spin tensor samples (small N only)."""
    gen = np.random.default_rng(seed)
    n = c.config_length
    sigma = np.where(gen.random(n) < 0.5, 1, -1).astype(np.int8)
    energy = hamiltonian(c, sigma)
    rec = 0
    for s in range(n_sweeps):
        for _ in range(n):
            i = int(gen.integers(n))
            sigma[i] = -sigma[i]
            new_energy = hamiltonian(c, sigma)
            dh = new_energy - energy
            if dh >= 0.0 or gen.random() < np.exp(beta * dh):
                energy = new_energy
            else:
                sigma[i] = -sigma[i]
        if s >= burn and (s - burn) % thin == 0:
            out[rec] = sigma
            rec += 1
    return rec


def _ladder(beta: float, n_rungs: int) -> np.ndarray:
    """Geometric tempering ladder descending from beta to min(beta, 0.3)."""
    lo = min(beta, 0.3)
    if n_rungs == 1 or lo == beta:
        return np.array([beta])
    ratio = (lo / beta) ** (1.0 / (n_rungs - 1))
    return beta * ratio ** np.arange(n_rungs)


def mcmc_chain(c: CouplingSample, beta: float, sweeps: int, n_replicas: int,
               rng: RandomStream, burn_fraction: float = 0.2,
               thin: int = 1, tempering: bool = False, n_rungs: int = 8):
    """Independent Metropolis chains, one per replica, on a shared sample.

    Returns a list of (n_records, config_length) int8 arrays.  With
    tempering=True each replica runs a geometric ladder of n_rungs
    chains with swap proposals every sweep, and the target-temperature
    rung is recorded.  thin is measured in sweeps (N flips each).
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    if n_replicas not in (2, 3):
        raise ValueError("n_replicas must be 2 or 3")
    burn = int(burn_fraction * sweeps)
    n_rec = max(0, -(-(sweeps - burn) // thin))
    betas = _ladder(beta, n_rungs if tempering else 1)
    replicas = []
    for r, sub in enumerate(rng.split(n_replicas)):
        seed = sub.integer_seed()
        out = np.empty((n_rec, c.config_length), np.int8)
        if c.kind == "sk":
            A = c.W + c.W.T
            got = _sk_chain_kernel(A, betas, sweeps, burn, thin, seed,
                                   tempering, out)
        elif c.kind == "bipartite":
            got = _bipartite_chain_kernel(c.W, betas, sweeps, burn, thin,
                                          seed, tempering, out)
        else:
            got = _generic_chain(c, beta, sweeps, burn, thin, seed, out)
        assert got == n_rec
        replicas.append(out)
    return replicas


# ---------------------------------------------------------------------------
# overlap statistics

@dataclass(frozen=True)
class OverlapStats:
    """Law of the two-replica overlap sigma.sigma'/N under one sample's
    Gibbs measure.  Histogram bins are centered on the discrete overlap
    values; histogram may be None in exact mode above the 4^N cap."""

    bin_edges: Optional[np.ndarray]
    masses: Optional[np.ndarray]
    moment1: float
    moment2: float
    mode: str
    n_samples: int = 0
    moment1_std_error: float = 0.0
    moment2_std_error: float = 0.0


def _overlap_bins(N: int):
    values = np.arange(-N, N + 1, 2)
    edges = np.concatenate([(values - 1.0), [values[-1] + 1.0]]) / N
    return values, edges


def _gibbs_weights(c: CouplingSample, beta: float):
    energies = hamiltonian_all(c, all_configs(c.N))
    logp = beta * energies
    return np.exp(logp - logsumexp(logp))


def _mass_from_dots(dots, weights, N):
    masses = np.zeros(N + 1)
    np.add.at(masses, (dots + N) // 2, weights)
    return masses


def overlap_distribution(c: CouplingSample, beta: float, mode: str,
                         sweeps: int = 100_000, rng: Optional[RandomStream] = None,
                         tempering: bool = False) -> OverlapStats:
    """Overlap law of two independent replicas for this coupling sample."""
    if c.kind == "bipartite":
        raise NotImplementedError("overlap statistics are single-type only")
    N = c.N
    _, edges = _overlap_bins(N)
    if mode == "exact":
        if N > EXACT_MOMENT_CAP:
            raise ValueError("enumeration too large for exact overlap moments")
        S = all_configs(N)
        pi = _gibbs_weights(c, beta)
        mean_vec = pi @ S
        gram = (S * pi[:, None]).T @ S
        m1 = float(mean_vec @ mean_vec) / N
        m2 = float(np.sum(gram * gram)) / N**2
        masses = None
        bin_edges = None
        if N <= EXACT_HISTOGRAM_CAP:
            dots = (S @ S.T).astype(np.int64)
            masses = _mass_from_dots(dots.reshape(-1),
                                     np.outer(pi, pi).reshape(-1), N)
            bin_edges = edges
        return OverlapStats(bin_edges=bin_edges, masses=masses,
                            moment1=m1, moment2=m2, mode="exact")
    if mode != "mcmc":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("mcmc mode requires a RandomStream")
    reps = mcmc_chain(c, beta, sweeps, 2, rng, tempering=tempering)
    overlaps_int = np.einsum("si,si->s", reps[0].astype(np.int64),
                             reps[1].astype(np.int64))
    ov = overlaps_int / N
    n = len(ov)
    masses = _mass_from_dots(overlaps_int, np.full(n, 1.0 / n), N)
    m1, se1 = _batch_mean(ov)
    m2, se2 = _batch_mean(ov * ov)
    return OverlapStats(bin_edges=edges, masses=masses, moment1=m1,
                        moment2=m2, mode="mcmc", n_samples=n,
                        moment1_std_error=se1, moment2_std_error=se2)


def _batch_mean(x, n_batches: int = 50):
    """Mean and autocorrelation-robust standard error by batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    mean = float(np.mean(x))
    b = max(2, n // n_batches)
    nb = n // b
    if nb < 2:
        return mean, float(np.std(x) / np.sqrt(max(1, n)))
    bm = x[: nb * b].reshape(nb, b).mean(axis=1)
    return mean, float(np.std(bm, ddof=1) / np.sqrt(nb))


def total_variation(a: OverlapStats, b: OverlapStats) -> float:
    if a.masses is None or b.masses is None:
        raise ValueError("both statistics need histograms")
    if a.masses.shape != b.masses.shape:
        raise ValueError("histograms use different bins")
    return 0.5 * float(np.sum(np.abs(a.masses - b.masses)))


# ---------------------------------------------------------------------------
# ultrametric defects

@dataclass(frozen=True)
class TripleDefectStats:
    """Defect = (largest - second largest pairwise Euclidean distance)
    among three replicas, in units of sqrt(N)."""

    epsilon: float
    violation_fraction: float
    defect_quantiles: tuple  # ((0.5, v), (0.9, v), (0.99, v))
    mode: str
    n_samples: int = 0
    violation_std_error: float = 0.0


_QUANTS = (0.5, 0.9, 0.99)


def _defects_from_distance_rows(d_ab, d_ac, d_bc):
    """Defect for every (b,c) given the three pairwise distance blocks."""
    x = d_ab[:, None] + np.zeros_like(d_bc)
    y = d_ac[None, :] + np.zeros_like(d_bc)
    hi = np.maximum(np.maximum(x, y), d_bc)
    lo = np.minimum(np.minimum(x, y), d_bc)
    mid = x + y + d_bc - hi - lo
    return hi - mid


def _quantiles_from_histogram(grid, masses, quants):
    cdf = np.cumsum(masses)
    cdf /= cdf[-1]
    return tuple((q, float(grid[np.searchsorted(cdf, q)])) for q in quants)


def ultrametric_defects(c: CouplingSample, beta: float, epsilon: float,
                        mode: str, sweeps: int = 100_000,
                        rng: Optional[RandomStream] = None,
                        tempering: bool = False) -> TripleDefectStats:
    """Triangle-defect law of three independent replicas."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if c.kind == "bipartite":
        raise NotImplementedError("defect statistics are single-type only")
    N = c.N
    if mode == "exact":
        if N > EXACT_TRIPLE_CAP:
            raise ValueError("enumeration too large for exact triples")
        S = all_configs(N)
        pi = _gibbs_weights(c, beta)
        O = (S @ S.T).astype(float)
        D = np.sqrt(np.maximum(2.0 * (N - O), 0.0)) / np.sqrt(N)
        n_bins = 4000
        grid = np.linspace(0.0, 2.0 * np.sqrt(2.0), n_bins)
        hist = np.zeros(n_bins)
        violation = 0.0
        for a in range(len(S)):
            defects = _defects_from_distance_rows(D[a], D[a], D)
            w = pi[a] * np.outer(pi, pi)
            idx = np.minimum((defects / grid[-1] * (n_bins - 1)).astype(np.int64),
                             n_bins - 1)
            np.add.at(hist, idx.reshape(-1), w.reshape(-1))
            violation += float(np.sum(w[defects > epsilon]))
        return TripleDefectStats(
            epsilon=epsilon, violation_fraction=violation,
            defect_quantiles=_quantiles_from_histogram(grid, hist, _QUANTS),
            mode="exact")
    if mode != "mcmc":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("mcmc mode requires a RandomStream")
    reps = mcmc_chain(c, beta, sweeps, 3, rng, tempering=tempering)
    a, b, d = (r.astype(np.int64) for r in reps)

    def dist(u, v):
        return np.sqrt(2.0 * (N - np.einsum("si,si->s", u, v))) / np.sqrt(N)

    stacked = np.stack([dist(a, b), dist(a, d), dist(b, d)])
    srt = np.sort(stacked, axis=0)
    defects = srt[2] - srt[1]
    frac, se = _batch_mean(defects > epsilon)
    quants = tuple((q, float(np.quantile(defects, q))) for q in _QUANTS)
    return TripleDefectStats(epsilon=epsilon, violation_fraction=frac,
                             defect_quantiles=quants, mode="mcmc",
                             n_samples=len(defects), violation_std_error=se)


# ---------------------------------------------------------------------------
# inverse temperature

def inverse_temperature(levels, target: float) -> float:
    """The unique beta with sum_k e_k exp(-beta e_k) / sum_k exp(-beta e_k)
    equal to target; requires min(levels) < target < max(levels)."""
    e = np.sort(np.asarray(levels, dtype=float))
    if len(e) < 2 or e[0] == e[-1]:
        raise ValueError("need at least two distinct levels")
    if not e[0] < target < e[-1]:
        raise ValueError("no solution: target outside the open level range")

    def mean_energy(beta):
        logw = -beta * e
        logw -= logw.max()
        w = np.exp(logw)
        return float(e @ w / w.sum()) - target

    lo, hi = -1.0, 1.0
    while mean_energy(lo) < 0:
        lo *= 2.0
    while mean_energy(hi) > 0:
        hi *= 2.0
    return float(brentq(mean_energy, lo, hi, xtol=1e-13, rtol=1e-14))


# ---------------------------------------------------------------------------
# acceptance-rule consistency

def incremental_delta_consistency(c: CouplingSample, n_flips: int,
                                  rng: RandomStream) -> float:
    """Max |incremental dH - full-recompute dH| over random single flips.

    Exercises the same field-update formulas as the chain kernels.
    """
    gen = rng.generator()
    n = c.config_length
    sigma = np.where(gen.random(n) < 0.5, 1, -1).astype(np.int8)
    worst = 0.0
    N = c.N
    if c.kind == "sk":
        A = c.W + c.W.T
        f = A @ sigma.astype(float)
    elif c.kind == "bipartite":
        f1 = c.W @ sigma[N:].astype(float)
        f2 = c.W.T @ sigma[:N].astype(float)
    for _ in range(n_flips):
        i = int(gen.integers(0, n))
        if c.kind == "sk":
            dh = -2.0 * sigma[i] * (f[i] - A[i, i] * sigma[i]) / np.sqrt(N)
        elif c.kind == "bipartite":
            if i < N:
                dh = -2.0 * sigma[i] * f1[i] / np.sqrt(N)
            else:
                dh = -2.0 * sigma[i] * f2[i - N] / np.sqrt(N)
        else:
            dh = None
        before = hamiltonian(c, sigma)
        sigma[i] = -sigma[i]
        after = hamiltonian(c, sigma)
        if dh is None:
            dh = after - before  # p-spin chains recompute in full anyway
        worst = max(worst, abs((after - before) - dh))
        if c.kind == "sk":
            f += 2.0 * sigma[i] * A[:, i]
        elif c.kind == "bipartite":
            if i < N:
                f2 += 2.0 * sigma[i] * c.W[i, :]
            else:
                f1 += 2.0 * sigma[i] * c.W[:, i - N]
    return worst

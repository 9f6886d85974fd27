"""Parisi functional for single-type models: PDE solvers over atomic
order parameters and minimization over k-atom measures.

The order parameter is an atomic probability measure mu on [0,1].  The
value Phi_mu(0,0) of the backwards parabolic equation

    -d_t Phi = beta^2 (d_x^2 Phi + mu([0,t]) (d_x Phi)^2),
    Phi(1,x) = log cosh(x),

enters the functional

    P(mu) = Phi_mu(0,0) - beta^2 int_0^1 t mu([0,t]) dt + log 2,

whose infimum over measures is the limit free energy.  Two solvers are
provided: an exact piecewise Cole-Hopf recursion (phi_recursive) and a
semi-implicit finite-difference scheme (parisi_pde_fd) used to
cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import minimize as _scipy_minimize
from scipy.special import expit

from .core import RandomStream
from .recursion import backward_value, log_cosh

__all__ = [
    "AtomicMeasure",
    "PdeConfig",
    "measure_cdf",
    "parisi_pde_fd",
    "phi_recursive",
    "parisi_functional",
    "minimize_parisi",
    "MinimizeResult",
    "default_pde_config",
]


@dataclass(frozen=True)
class AtomicMeasure:
    """k-atom probability measure on [0,1]: atoms strictly increasing,
    positive weights summing to one."""

    atoms: tuple
    weights: tuple

    def __post_init__(self):
        atoms = tuple(float(q) for q in self.atoms)
        weights = tuple(float(w) for w in self.weights)
        if len(atoms) < 1 or len(atoms) != len(weights):
            raise ValueError("need k >= 1 atoms with matching weights")
        if any(not (0.0 <= q <= 1.0) for q in atoms):
            raise ValueError("atoms must lie in [0,1]")
        if any(a >= b for a, b in zip(atoms, atoms[1:])):
            raise ValueError("atoms must be strictly increasing")
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def delta(cls, q: float) -> "AtomicMeasure":
        return cls((q,), (1.0,))

    @classmethod
    def from_arrays(cls, atoms, weights, merge_tol: float = 1e-12) -> "AtomicMeasure":
        """Build a measure from possibly unsorted/duplicated atoms by
        sorting and merging atoms closer than merge_tol."""
        order = np.argsort(np.asarray(atoms, dtype=float))
        qs = np.asarray(atoms, dtype=float)[order]
        ws = np.asarray(weights, dtype=float)[order]
        merged_q = [qs[0]]
        merged_w = [ws[0]]
        for q, w in zip(qs[1:], ws[1:]):
            if q - merged_q[-1] <= merge_tol:
                merged_w[-1] += w
            else:
                merged_q.append(q)
                merged_w.append(w)
        total = sum(merged_w)
        return cls(tuple(merged_q), tuple(w / total for w in merged_w))

    @property
    def k(self) -> int:
        return len(self.atoms)


def measure_cdf(mu: AtomicMeasure, t: float) -> float:
    """mu([0,t]), right-continuous (an atom at t counts at t)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0,1]")
    return float(sum(w for q, w in zip(mu.atoms, mu.weights) if q <= t))


@dataclass(frozen=True)
class PdeConfig:
    """Discretization for parisi_pde_fd: x in [-L,L] with nx points, nt
    backward time steps; scheme selects which solver parisi_functional
    delegates to."""

    half_width: float = 6.0
    nx: int = 801
    nt: int = 600
    scheme: str = "recursive_quadrature"
    quad_order: int = 40

    def __post_init__(self):
        if self.half_width < 4:
            raise ValueError("half_width must be >= 4")
        if self.nx < 16 or self.nt < 16:
            raise ValueError("nx and nt must be >= 16")
        if self.scheme not in ("finite_difference", "recursive_quadrature"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def default_pde_config(beta: float, scheme: str = "recursive_quadrature") -> PdeConfig:
    L = max(6.0, 4.0 * beta * np.sqrt(2.0) + 4.0)
    nx = 2 * int(L / 0.015) + 1
    dx = 2 * L / (nx - 1)
    # keep beta^2 dt / dx <= 0.5 for the explicit gradient-squared term
    nt = max(600, int(np.ceil(beta**2 / (0.5 * dx))) + 1)
    return PdeConfig(half_width=L, nx=nx, nt=nt, scheme=scheme)


def _cdf_levels(mu: AtomicMeasure, beta: float):
    """Cole-Hopf levels (variance, exponent) from t=0 inward to t=1.

    On each interval where m = mu([0,t]) is constant the PDE collapses to
    one Gaussian convolution with variance 2 beta^2 * (interval length)
    and exponent m.
    """
    edges = [0.0] + [q for q in mu.atoms if 0.0 < q < 1.0] + [1.0]
    levels = []
    for t0, t1 in zip(edges, edges[1:]):
        levels.append((2.0 * beta**2 * (t1 - t0), measure_cdf(mu, t0)))
    return levels


def phi_recursive(mu: AtomicMeasure, beta: float, quad_order: int = 40,
                  mode: str = "auto") -> float:
    """Phi_mu(0,0) by exact interval-wise Cole-Hopf recursion."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if quad_order < 10:
        raise ValueError("quad_order must be >= 10")
    if beta == 0:
        return 0.0
    return backward_value(_cdf_levels(mu, beta), log_cosh,
                          quad_order=quad_order, mode=mode)


def parisi_pde_fd(mu: AtomicMeasure, beta: float, cfg: Optional[PdeConfig] = None) -> float:
    """Phi_mu(0,0) by semi-implicit finite differences.

    Crank-Nicolson for the diffusion, explicit Heun (predictor-corrector)
    for the gradient-squared term; the coefficient mu([0,t]) is averaged
    exactly over each time step.  Boundary rows impose zero second
    derivative at +-L, matching the |x| + const asymptote of Phi.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if cfg is None:
        cfg = default_pde_config(beta)
    nx, nt, L = cfg.nx, cfg.nt, cfg.half_width
    x = np.linspace(-L, L, nx)
    dx = x[1] - x[0]
    dt = 1.0 / nt
    phi = log_cosh(x)
    if beta == 0:
        return 0.0

    c = 0.5 * beta**2 * dt / dx**2
    # banded forms of I -+ c*D2 with zero-curvature boundary rows
    ab_impl = np.zeros((3, nx))
    ab_impl[0, 2:] = -c
    ab_impl[1, :] = 1.0 + 2.0 * c
    ab_impl[2, :-2] = -c
    ab_impl[1, 0] = ab_impl[1, -1] = 1.0
    ab_impl[0, 1] = ab_impl[2, -2] = 0.0

    def apply_explicit(u):
        out = u.copy()
        out[1:-1] += c * (u[2:] - 2.0 * u[1:-1] + u[:-2])
        return out

    def grad_sq(u):
        g = np.empty_like(u)
        g[1:-1] = (u[2:] - u[:-2]) / (2.0 * dx)
        g[0] = (u[1] - u[0]) / dx
        g[-1] = (u[-1] - u[-2]) / dx
        return g * g

    def mbar(t_lo, t_hi):
        # exact average of mu([0,t]) over [t_lo, t_hi]
        acc = 0.0
        for q, w in zip(mu.atoms, mu.weights):
            acc += w * max(0.0, t_hi - max(t_lo, q))
        return acc / (t_hi - t_lo)

    for step in range(nt):
        t_hi = 1.0 - step * dt
        t_lo = t_hi - dt
        m = mbar(t_lo, t_hi)
        rhs0 = beta**2 * m * grad_sq(phi)
        # predictor
        b = apply_explicit(phi) + dt * rhs0
        b[0], b[-1] = phi[0], phi[-1]
        pred = solve_banded((1, 1), ab_impl, b)
        # corrector: average the nonlinear term over the step
        b = apply_explicit(phi) + 0.5 * dt * (rhs0 + beta**2 * m * grad_sq(pred))
        b[0], b[-1] = phi[0], phi[-1]
        phi = solve_banded((1, 1), ab_impl, b)
        # boundary rows carried the old value; advance them linearly
        phi[0] = 2.0 * phi[1] - phi[2]
        phi[-1] = 2.0 * phi[-2] - phi[-3]
        if not np.all(np.isfinite(phi)):
            raise RuntimeError("finite-difference solve diverged; refine grid")
    return float(np.interp(0.0, x, phi))


def parisi_functional(mu: AtomicMeasure, beta: float,
                      cfg: Optional[PdeConfig] = None) -> float:
    """P(mu) = Phi_mu(0,0) - beta^2 int_0^1 t mu([0,t]) dt + log 2.

    The integral is sum_j w_j (1 - q_j^2)/2 in closed form.
    """
    if cfg is not None and cfg.scheme == "finite_difference":
        phi = parisi_pde_fd(mu, beta, cfg)
    else:
        order = cfg.quad_order if cfg is not None else 40
        phi = phi_recursive(mu, beta, quad_order=order)
    integral = sum(w * (1.0 - q**2) / 2.0
                   for q, w in zip(mu.atoms, mu.weights))
    return float(phi - beta**2 * integral + np.log(2.0))


def _theta_to_measure(theta: np.ndarray, k: int) -> AtomicMeasure:
    atoms = expit(theta[:k])
    raw = theta[k:] - np.max(theta[k:])
    # floor the exponent so extreme optimizer iterates cannot underflow a
    # weight to exactly zero
    weights = np.exp(np.maximum(raw, -60.0))
    weights /= weights.sum()
    return AtomicMeasure.from_arrays(atoms, weights, merge_tol=1e-10)


def _measure_to_theta(mu: AtomicMeasure, k: int) -> np.ndarray:
    """Approximate inverse of _theta_to_measure, used to warm-start from
    a lower-k solution (extra atoms duplicated near existing ones)."""
    atoms = list(mu.atoms)
    weights = list(mu.weights)
    while len(atoms) < k:
        j = int(np.argmax(weights))
        atoms.append(min(1.0, atoms[j] + 1e-3 * (1 + len(atoms))))
        weights[j] /= 2.0
        weights.append(weights[j])
    qs = np.clip(np.asarray(atoms[:k]), 1e-8, 1 - 1e-8)
    ws = np.asarray(weights[:k])
    ws = ws / ws.sum()
    return np.concatenate([np.log(qs / (1 - qs)), np.log(ws)])


@dataclass
class MinimizeResult:
    measure: AtomicMeasure
    value: float
    converged: bool
    starts: list = field(default_factory=list)  # (start values, best per start)


def minimize_parisi(beta: float, k: int, n_starts: int = 8, seed: int = 0,
                    search_order: int = 20, final_order: int = 40,
                    extra_starts=(), fatol: float = 1e-7,
                    maxiter: int = 4000) -> MinimizeResult:
    """Minimize P over k-atom measures by multi-start Nelder-Mead.

    Atoms are parametrized through a logistic map into (0,1) and weights
    through softmax, so the search space is unconstrained; measures from
    extra_starts (e.g. the k-1 solution) seed additional starts.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = RandomStream(seed, stream_id=71).generator()

    def objective(theta):
        mu = _theta_to_measure(np.asarray(theta), k)
        return parisi_functional(mu, beta,
                                 PdeConfig(quad_order=search_order))

    thetas = [rng.normal(0.0, 1.5, size=2 * k) for _ in range(n_starts)]
    thetas += [_measure_to_theta(mu, k) for mu in extra_starts]

    # candidates include the warm-start measures themselves, so warm
    # starting from a lower-k solution can never end up above it
    candidates = list(extra_starts)
    starts, all_converged = [], True
    for theta0 in thetas:
        res = _scipy_minimize(objective, theta0, method="Nelder-Mead",
                              options=dict(fatol=fatol, xatol=1e-6,
                                           maxiter=maxiter, adaptive=True))
        starts.append((np.asarray(theta0).tolist(), float(res.fun)))
        all_converged = all_converged and bool(res.success)
        candidates.append(_theta_to_measure(res.x, k))

    # the search runs at a cheaper quadrature order; pick the winner by
    # re-evaluating every candidate at the final order
    final_cfg = PdeConfig(quad_order=final_order)
    values = [parisi_functional(mu, beta, final_cfg) for mu in candidates]
    best = int(np.argmin(values))
    return MinimizeResult(measure=candidates[best], value=float(values[best]),
                          converged=all_converged, starts=starts)

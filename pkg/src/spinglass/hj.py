"""Hamilton-Jacobi side: discretized path space, the initial condition
psi, the Hopf-Lax solver for convex single-type models, and the
characteristics engine for the bipartite model.

Paths q in Q are nondecreasing nonnegative step functions on [0,1],
stored as m values on uniform cells.  The enriched free energy f(t,q)
solves (in the limit) d_t f = int_0^1 xi(d_q f) with f(0,.) = psi; for
the convex single-type case the Hopf-Lax formula

    f(t,q) = sup_{q' in Q} [ psi(q + q') - t (1/m) sum_j xi*(q'_j / t) ]

is implemented by projected simplex search, and characteristics
q - t grad_xi(d_q psi(q)) provide first-order predictions that remain
meaningful (as candidates) in the nonconvex bipartite case.

Sign conventions: psi and f carry the minus sign of the enriched
finite-size free energy, so psi(0) = -log 2 and the limit free energy of
the Parisi formula is recovered as  -f(t, 0) + t xi(1)  at t = beta^2/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .core import MixtureFunction, RandomStream, xi_dual, xi_eval, xi_prime
from .recursion import backward_value, log_2cosh

__all__ = [
    "StepPath",
    "PathPair",
    "CharacteristicPrediction",
    "psi_initial",
    "path_gradient",
    "hopf_lax",
    "characteristic_predict",
    "characteristics_through",
    "hj_residual",
    "limit_free_energy_from_hj",
]


@dataclass(frozen=True)
class StepPath:
    """Nondecreasing nonnegative step function: q(u) = values[ceil(um)-1]
    on uniform cells of [0,1]."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 1:
            raise ValueError("need m >= 1 values")
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ValueError("path values must be finite and >= 0")
        if any(a > b + 1e-14 for a, b in zip(vals, vals[1:])):
            raise ValueError("path must be nondecreasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, h: float, m: int = 16) -> "StepPath":
        return cls((float(h),) * m)

    @property
    def m(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class PathPair:
    """A pair of paths (one per bipartite layer) on the same grid."""

    q1: StepPath
    q2: StepPath

    def __post_init__(self):
        if self.q1.m != self.q2.m:
            raise ValueError("paths must share one grid")

    @property
    def m(self) -> int:
        return self.q1.m


@dataclass(frozen=True)
class CharacteristicPrediction:
    """A straight characteristic from `source` hitting `target` at time t,
    carrying the transported value; infeasible marks a target that left
    the cone of nonnegative paths."""

    source: Union[StepPath, PathPair]
    target: Union[StepPath, PathPair]
    t: float
    predicted_value: float
    gradient: tuple  # density vector(s): (p,) single-type, (p1, p2) bipartite
    infeasible: bool


def _project_monotone(x: np.ndarray) -> np.ndarray:
    """Nearest-in-spirit point of the cone: clip below 0, then running max."""
    return np.maximum.accumulate(np.clip(x, 0.0, None))


def _psi_levels(values: np.ndarray):
    """Recursion levels for psi: cell j contributes Gaussian variance
    2(v_j - v_{j-1}) and Cole-Hopf exponent (j-1)/m, the measure of the
    path's sublevel set strictly below cell j."""
    m = len(values)
    deltas = np.diff(np.concatenate([[0.0], values]))
    return [(2.0 * deltas[j], j / m) for j in range(m)]


def psi_initial(q: Union[StepPath, PathPair], quad_order: int = 20,
                mode: str = "auto") -> float:
    """Initial condition psi(q) = f(t=0, q) of the enriched free energy.

    Bipartite pairs decouple at t = 0, so psi adds over the layers.
    Constant paths reduce to the closed form h - E log 2cosh(sqrt(2h) Z).
    """
    if isinstance(q, PathPair):
        return psi_initial(q.q1, quad_order, mode) + psi_initial(q.q2, quad_order, mode)
    v = q.array()
    levels = _psi_levels(v)
    a0 = backward_value(levels, log_2cosh, quad_order=quad_order, mode=mode)
    return float(v[-1] - a0)


def path_gradient(g, q: StepPath, step: float = 1e-5,
                  merge_tol: float = 0.0) -> np.ndarray:
    """Gradient density of a path functional at q, one value per cell.

    Perturbs along tail indicators T_j (adding delta to cells j..m keeps
    the path monotone for delta > 0; the backward step is used only when
    it stays in the cone), then converts the directional derivatives
    G_j = dg(q; T_j) into the cell density rho_j = m (G_j - G_{j+1}).

    With merge_tol > 0, cells whose levels are closer than merge_tol are
    treated as one block and share the block-averaged density: splitting
    the density between nearly coincident levels is ill-conditioned,
    while the block total stays well determined.
    """
    if step <= 0 or step < 1e-12:
        raise ValueError("step size underflow")
    v = q.array()
    m = len(v)
    base = None
    G = np.zeros(m + 1)
    for j in range(m):
        up = v.copy()
        up[j:] += step
        g_up = g(StepPath(tuple(up)))
        prev = v[j - 1] if j > 0 else 0.0
        if v[j] - step >= prev:
            down = v.copy()
            down[j:] -= step
            G[j] = (g_up - g(StepPath(tuple(down)))) / (2.0 * step)
        else:
            if base is None:
                base = g(q)
            up2 = v.copy()
            up2[j:] += 2.0 * step
            G[j] = (-3.0 * base + 4.0 * g_up - g(StepPath(tuple(up2)))) / (2.0 * step)
    rho = m * (G[:-1] - G[1:])
    if merge_tol > 0:
        j = 0
        while j < m:
            k = j
            while k + 1 < m and v[k + 1] - v[k] <= merge_tol:
                k += 1
            if k > j:
                rho[j:k + 1] = rho[j:k + 1].mean()
            j = k + 1
    return rho


def _dual_sum(mixture: MixtureFunction, rates: np.ndarray) -> float:
    return sum(xi_dual(mixture, s) for s in rates)


def hopf_lax(t: float, q: StepPath, mixture: MixtureFunction,
             quad_order: int = 20, n_starts: int = 4, seed: int = 0,
             maxiter_per_dim: int = 120, full_output: bool = False):
    """f(t,q) by the Hopf-Lax formula (convex single-type models).

    Maximizes psi(q + q') - t (1/m) sum_j xi*(q'_j/t) over nondecreasing
    q' >= 0 on the same grid (projected Nelder-Mead, multi-start).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    v = q.array()
    m = len(v)
    if t == 0:
        value = psi_initial(q, quad_order)
        return (value, q, True) if full_output else value

    def objective(x):
        inc = _project_monotone(np.asarray(x))
        val = psi_initial(StepPath(tuple(v + inc)), quad_order)
        return -(val - t * _dual_sum(mixture, inc / t) / m)

    rng = RandomStream(seed, stream_id=97).generator()
    starts = [np.zeros(m)]
    p = path_gradient(lambda qq: psi_initial(qq, quad_order), q)
    starts.append(np.clip(t * xi_prime(mixture, np.maximum(p, 0.0)), 0.0, None))
    for _ in range(n_starts - len(starts)):
        starts.append(np.sort(np.abs(rng.normal(0.0, max(t, 0.1), size=m))))

    best_x, best_val, converged = None, np.inf, False
    for x0 in starts:
        res = _scipy_minimize(objective, x0, method="Nelder-Mead",
                              options=dict(fatol=1e-9, xatol=1e-7,
                                           maxiter=maxiter_per_dim * m,
                                           adaptive=True))
        if res.fun < best_val:
            best_val, best_x, converged = float(res.fun), res.x, bool(res.success)
    value = -best_val
    if full_output:
        arg = StepPath(tuple(v + _project_monotone(best_x)))
        return value, arg, converged
    return value


def _as_target_path(values: np.ndarray, tol: float = 1e-8) -> Optional[StepPath]:
    """The endpoint of a characteristic line as a path, or None if it
    leaves the cone (negative values, or decreasing beyond tolerance)."""
    if np.min(values) < -tol:
        return None
    if np.max(values[:-1] - values[1:], initial=0.0) > tol:
        return None
    return StepPath(tuple(np.maximum.accumulate(np.clip(values, 0.0, None))))


def _xi_cells(model, p1: np.ndarray, p2: Optional[np.ndarray]):
    """Per-cell xi(p), grad_xi(p), p.grad_xi(p) for either model class."""
    if model == "bipartite":
        xi = p1 * p2
        return xi, (p2, p1), 2.0 * xi
    xi = xi_eval(model, p1)
    dxi = xi_prime(model, p1)
    return xi, (dxi,), p1 * dxi


def characteristic_predict(q: Union[StepPath, PathPair], t: float, model,
                           quad_order: int = 20,
                           merge_tol: float = 1e-9) -> CharacteristicPrediction:
    """First-order transport along the characteristic through q.

    target = q - t grad_xi(p) with p = d_q psi(q); the transported value
    is psi(q) + t (1/m) sum_cells [xi(p) - p.grad_xi(p)], the standard
    first-order flow value for d_t f = int xi(d_q f) (it matches the
    Hopf-Lax solution at short times, which pins the sign).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    psi_fn = lambda qq: psi_initial(qq, quad_order)
    if isinstance(q, PathPair):
        if model != "bipartite":
            raise ValueError("path pairs require the bipartite model")
        p1 = path_gradient(psi_fn, q.q1, merge_tol=merge_tol)
        p2 = path_gradient(psi_fn, q.q2, merge_tol=merge_tol)
        xi, grad, p_dot = _xi_cells("bipartite", p1, p2)
        t1 = q.q1.array() - t * grad[0]
        t2 = q.q2.array() - t * grad[1]
        target1 = _as_target_path(t1)
        target2 = _as_target_path(t2)
        infeasible = target1 is None or target2 is None
        value = psi_initial(q, quad_order) + t * float(np.mean(xi - p_dot))
        target = None if infeasible else PathPair(target1, target2)
        return CharacteristicPrediction(source=q, target=target, t=t,
                                        predicted_value=float(value),
                                        gradient=(tuple(p1), tuple(p2)),
                                        infeasible=infeasible)
    p = path_gradient(psi_fn, q, merge_tol=merge_tol)
    xi, grad, p_dot = _xi_cells(model, p, None)
    tv = q.array() - t * grad[0]
    target = _as_target_path(tv)
    infeasible = target is None
    value = psi_initial(q, quad_order) + t * float(np.mean(xi - p_dot))
    return CharacteristicPrediction(source=q, target=target, t=t,
                                    predicted_value=float(value),
                                    gradient=(tuple(p),), infeasible=infeasible)


def _source_residual(source, t, target, model, quad_order):
    """sup-norm of source - t grad_xi(p(source)) - target."""
    pred = characteristic_predict(source, t, model, quad_order)
    if isinstance(target, PathPair):
        if pred.infeasible or pred.target is None:
            return np.inf, pred
        r1 = np.max(np.abs(pred.target.q1.array() - target.q1.array()))
        r2 = np.max(np.abs(pred.target.q2.array() - target.q2.array()))
        return max(r1, r2), pred
    if pred.infeasible or pred.target is None:
        return np.inf, pred
    return float(np.max(np.abs(pred.target.array() - target.array()))), pred


def characteristics_through(t: float, target: Union[StepPath, PathPair],
                            model, quad_order: int = 20, n_starts: int = 10,
                            seed: int = 0, max_iter: int = 80,
                            damping: float = 1.0, tol: float = 3e-9,
                            dedup_tol: float = 1e-5):
    """All characteristic sources found whose line hits `target` at time t.

    Damped fixed-point iteration source <- P[(1-d) source + d (target +
    t grad_xi(p(source)))] from the target itself plus random starts; P
    projects onto the monotone cone.  Solutions are deduplicated in
    sup-norm and returned sorted by predicted value; an empty list means
    the target may be unreachable on this grid.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    bipartite = isinstance(target, PathPair)
    m = target.m
    rng = RandomStream(seed, stream_id=131).generator()
    psi_fn = lambda qq: psi_initial(qq, quad_order)

    def as_arrays(src):
        if bipartite:
            return src.q1.array(), src.q2.array()
        return (src.array(),)

    def make_source(arrays):
        if bipartite:
            return PathPair(StepPath(tuple(arrays[0])), StepPath(tuple(arrays[1])))
        return StepPath(tuple(arrays[0]))

    tgt = as_arrays(target)

    def fixed_point_map(arrays):
        # the psi gradient density is an expected overlap, so values
        # outside [0,1] are finite-difference noise (plateaus created by
        # the cone projection are the usual culprit); clamping keeps the
        # iteration bounded, and the final residual check is unclamped
        if bipartite:
            p1 = np.clip(path_gradient(psi_fn, make_source(arrays).q1,
                                       merge_tol=1e-3), 0.0, 1.0)
            p2 = np.clip(path_gradient(psi_fn, make_source(arrays).q2,
                                       merge_tol=1e-3), 0.0, 1.0)
            nxt = (tgt[0] + t * p2, tgt[1] + t * p1)
        else:
            p = np.clip(path_gradient(psi_fn, make_source(arrays),
                                      merge_tol=1e-3), 0.0, 1.0)
            nxt = (tgt[0] + t * xi_prime(model, p),)
        return tuple(_project_monotone(a) for a in nxt)

    starts = [tgt]
    n_layers = 2 if bipartite else 1
    n_shift = max(0, (n_starts - 1) * 2 // 3)
    for _ in range(n_shift):
        # constant shifts keep constant targets on constant iterates,
        # where psi evaluations are cheapest and least noisy
        start = tuple(_project_monotone(tgt[layer] + np.abs(rng.normal(0.0, 2.0 * t)))
                      for layer in range(n_layers))
        starts.append(start)
    for _ in range(n_starts - 1 - n_shift):
        start = tuple(
            _project_monotone(tgt[layer]
                              + np.sort(np.abs(rng.normal(0.0, 0.7 * t, size=m))))
            for layer in range(n_layers))
        starts.append(start)

    found = []
    for start in starts:
        arrays = tuple(np.asarray(a, dtype=float) for a in start)
        for _ in range(max_iter):
            nxt = fixed_point_map(arrays)
            step = max(np.max(np.abs(a - b)) for a, b in zip(arrays, nxt))
            arrays = tuple(_project_monotone((1.0 - damping) * a + damping * b)
                           for a, b in zip(arrays, nxt))
            if step < tol:
                break
        candidates = [arrays]
        if all(a.max() - a.min() < 1e-5 for a in arrays):
            # nearly flat iterate: also try the exactly constant path
            # (the residual check below decides whether to keep it)
            candidates.append(tuple(np.full(m, a.mean()) for a in arrays))
        for cand in candidates:
            source = make_source(cand)
            residual, pred = _source_residual(source, t, target, model, quad_order)
            if residual > 5e-9:
                continue
            flat = np.concatenate(cand)
            if any(np.max(np.abs(flat - other)) <= dedup_tol for other, _ in found):
                continue
            found.append((flat, pred))
    return sorted((p for _, p in found), key=lambda p: p.predicted_value)


def hj_residual(f, t: float, q, model, dt: float = 1e-3, dq: float = 1e-3,
                constant_path: bool = False) -> float:
    """Finite-difference defect d_t f - (1/m) sum_cells xi(d_q f) at (t,q)
    (bipartite Hamiltonian: product of the two layer derivatives).

    f is a callable f(t, path); in constant_path mode f(t, h) (single) or
    f(t, h1, h2) (bipartite) with scalar field parameters, for sampled
    finite-size data that only exists on constant paths.
    """
    if dt <= 0 or dq <= 0:
        raise ValueError("stencil spacings must be positive")
    if dt < 1e-8 or dq < 1e-8:
        raise ValueError("stencil too coarse in resolution: spacing underflow")
    bipartite = model == "bipartite"
    if constant_path:
        if bipartite:
            h1, h2 = q
            dft = (f(t + dt, h1, h2) - f(t - dt, h1, h2)) / (2 * dt) if t >= dt \
                else (f(t + dt, h1, h2) - f(t, h1, h2)) / dt
            d1 = (f(t, h1 + dq, h2) - f(t, max(h1 - dq, 0.0), h2)) / (dq + min(h1, dq))
            d2 = (f(t, h1, h2 + dq) - f(t, h1, max(h2 - dq, 0.0))) / (dq + min(h2, dq))
            return float(dft - d1 * d2)
        h = float(q)
        dft = (f(t + dt, h) - f(t - dt, h)) / (2 * dt) if t >= dt \
            else (f(t + dt, h) - f(t, h)) / dt
        dfh = (f(t, h + dq) - f(t, max(h - dq, 0.0))) / (dq + min(h, dq))
        return float(dft - xi_eval(model, dfh))
    dft = (f(t + dt, q) - f(max(t - dt, 0.0), q)) / (dt + min(t, dt))
    if bipartite:
        p1 = path_gradient(lambda qq: f(t, PathPair(qq, q.q2)), q.q1, step=dq)
        p2 = path_gradient(lambda qq: f(t, PathPair(q.q1, qq)), q.q2, step=dq)
        return float(dft - np.mean(p1 * p2))
    p = path_gradient(lambda qq: f(t, qq), q, step=dq)
    return float(dft - np.mean(xi_eval(model, p)))


def limit_free_energy_from_hj(f_t0: float, t: float, mixture: MixtureFunction) -> float:
    """Convert f(t, q=0) back to the Parisi-formula free energy.

    The enriched free energy carries a minus sign and a -N t xi(1)
    normalization, so  lim F_N(beta) = -f(t, 0) + t xi(1)  at t = beta^2/2.
    """
    return float(-f_t0 + t * mixture.xi_one())

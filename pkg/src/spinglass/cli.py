"""Configuration-driven experiment runner.

Usage: spinglass <command> --config <file> [--threads K] [--out DIR]

Commands: enumerate, maximize, parisi, hopf-lax, characteristics, sample,
moments, check.  Configuration is a flat INI file (sections, key = value,
no nesting); every run writes a manifest.json with the fully resolved
configuration, the seed, and a build identifier.  Report bodies are
byte-identical across reruns and thread counts; timestamps appear only
in the manifest.

Exit codes: 0 success, 2 validation error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .core import MixtureFunction, ModelSpec, RandomStream, sample_couplings
from .exact import (derivative_identity_check, free_energy_sample, max_energy,
                    mean_free_energy, replica_moment_exact)
from .gibbs import overlap_distribution, ultrametric_defects
from .hj import (PathPair, StepPath, characteristics_through, hopf_lax,
                 limit_free_energy_from_hj)
from .parisi import minimize_parisi

__all__ = ["main", "run", "ValidationError", "NumericalError"]

COMMANDS = ("enumerate", "maximize", "parisi", "hopf-lax", "characteristics",
            "sample", "moments", "check")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class ValidationError(Exception):
    """Bad configuration or parameters; maps to exit code 2."""


class NumericalError(Exception):
    """Solver failed to converge or produced non-finite output; exit 3."""


# ---------------------------------------------------------------------------
# configuration schema

_REQUIRED = object()

# key -> (parser, default); _REQUIRED means the config must provide it.
_MODEL_KEYS = {
    "model.kind": (str, "sk"),
    "model.n": (int, 8),
    "model.coefficients": (str, "0,1"),
}

_SCHEMAS = {
    "enumerate": {
        **_MODEL_KEYS,
        "run.beta": (float, _REQUIRED),
        "run.n_samples": (int, 100),
    },
    "maximize": {
        **_MODEL_KEYS,
        "run.method": (str, "exhaustive"),
        "run.n_samples": (int, 1),
    },
    "parisi": {
        **_MODEL_KEYS,
        "run.beta": (float, _REQUIRED),
        "run.k": (int, 1),
        "run.n_starts": (int, 8),
        "run.quad_order": (int, 40),
    },
    "hopf-lax": {
        **_MODEL_KEYS,
        "run.t": (float, _REQUIRED),
        "run.h": (float, 0.0),
        "run.grid_m": (int, 16),
        "run.quad_order": (int, 20),
        "run.n_starts": (int, 4),
    },
    "characteristics": {
        **_MODEL_KEYS,
        "run.t_min": (float, _REQUIRED),
        "run.t_max": (float, _REQUIRED),
        "run.t_steps": (int, 5),
        "run.h": (float, 0.0),
        "run.h2": (float, 0.0),
        "run.grid_m": (int, 8),
        "run.quad_order": (int, 20),
        "run.n_starts": (int, 8),
    },
    "sample": {
        **_MODEL_KEYS,
        "run.beta": (float, _REQUIRED),
        "run.mode": (str, "mcmc"),
        "run.sweeps": (int, 100_000),
        "run.epsilon": (float, 0.5),
        "run.tempering": (lambda s: s.lower() in ("1", "true", "yes"), False),
    },
    "moments": {
        **_MODEL_KEYS,
        "run.beta": (float, _REQUIRED),
        "run.n": (int, 1),
    },
    "check": {
        **_MODEL_KEYS,
        "run.t": (float, 0.1),
        "run.h": (float, 0.1),
        "run.h2": (float, 0.1),
        "run.quad_order": (int, 40),
        "run.tolerance": (float, 1e-6),
    },
}


def _load_config(path: str):
    parser = configparser.ConfigParser()
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ValidationError(f"config does not parse: {exc}") from exc
    flat = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            flat[f"{section}.{key}".lower()] = value.strip()
    return flat


def _resolve(command: str, flat: dict) -> dict:
    """Apply the per-command schema: defaults in, types checked, extras
    and missing required keys rejected."""
    if "run.seed" not in flat:
        raise ValidationError("seed required")
    try:
        seed = int(flat["run.seed"])
    except ValueError as exc:
        raise ValidationError(f"seed must be an integer: {flat['run.seed']!r}") from exc
    schema = _SCHEMAS[command]
    resolved = {"command": command, "run.seed": seed}
    for key, (parse, default) in schema.items():
        if key in flat:
            try:
                resolved[key] = parse(flat[key])
            except ValueError as exc:
                raise ValidationError(f"bad value for {key}: {flat[key]!r}") from exc
        elif default is _REQUIRED:
            raise ValidationError(f"missing required key {key} for command {command}")
        else:
            resolved[key] = default
    known = set(schema) | {"run.seed", "run.out"}
    extras = sorted(set(flat) - known)
    if extras:
        raise ValidationError(f"unknown config keys: {', '.join(extras)}")
    if "run.out" in flat:
        resolved["run.out"] = flat["run.out"]
    return resolved


def _model_spec(resolved: dict) -> ModelSpec:
    kind = resolved["model.kind"]
    if kind not in ("sk", "mixture", "bipartite"):
        raise ValidationError(f"unknown model kind {kind!r}")
    mixture = None
    if kind == "mixture":
        try:
            coeffs = tuple(float(a) for a in resolved["model.coefficients"].split(","))
            mixture = MixtureFunction(coeffs)
        except ValueError as exc:
            raise ValidationError(f"bad mixture coefficients: {exc}") from exc
    try:
        return ModelSpec(kind=kind, N=resolved["model.n"], mixture=mixture)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _single_type_mixture(spec: ModelSpec) -> MixtureFunction:
    if spec.is_bipartite:
        raise ValidationError("this command requires a convex single-type model")
    return spec.mixture


# ---------------------------------------------------------------------------
# deterministic report writing

def _g17(x) -> str:
    """17-significant-digit decimal rendering (round-trips doubles)."""
    return format(float(x), ".17g")


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return _g17(x)
    return str(x)


def _write_csv(path: str, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _write_json(path: str, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_hash(resolved: dict) -> str:
    body = "\n".join(f"{k}={resolved[k]}" for k in sorted(resolved)
                     if k != "run.out")
    return hashlib.sha256(body.encode()).hexdigest()[:16]


REPORT_HEADER = ("model", "N", "beta", "t", "h1", "h2", "estimator", "value",
                 "std_error", "n_samples", "seed", "config_hash")


class _Report:
    """Accumulates estimator rows in the shared report schema."""

    def __init__(self, spec: ModelSpec, seed: int, cfg_hash: str):
        self.spec = spec
        self.seed = seed
        self.cfg_hash = cfg_hash
        self.rows = []

    def add(self, estimator: str, value: float, std_error=None, n_samples=None,
            beta=None, t=None, h1=None, h2=None):
        self.rows.append((self.spec.kind, self.spec.N, beta, t, h1, h2,
                          estimator, float(value), std_error, n_samples,
                          self.seed, self.cfg_hash))

    def write(self, out_dir: str):
        _write_csv(os.path.join(out_dir, "report.csv"), REPORT_HEADER, self.rows)


def _pool_map(fn, items, threads: int):
    """Order-preserving map, threaded when asked; results are identical
    either way because each item owns its substream."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# ---------------------------------------------------------------------------
# command implementations

def _cmd_enumerate(resolved, spec, report, out_dir, threads):
    beta = resolved["run.beta"]
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    n_samples = resolved["run.n_samples"]
    rng = RandomStream(resolved["run.seed"])
    if n_samples < 2:
        c = sample_couplings(spec, rng.substream(0))
        report.add("mean_free_energy", free_energy_sample(c, beta),
                   std_error=0.0, n_samples=1, beta=beta)
        return
    est = mean_free_energy(spec, beta, n_samples, rng, n_jobs=threads)
    report.add("mean_free_energy", est.mean, std_error=est.std_error,
               n_samples=est.n_samples, beta=beta)


def _cmd_maximize(resolved, spec, report, out_dir, threads):
    method = resolved["run.method"]
    if method not in ("exhaustive", "greedy", "local_search"):
        raise ValidationError(f"unknown method {method!r}")
    n_samples = resolved["run.n_samples"]
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    rng = RandomStream(resolved["run.seed"])

    def one(i: int) -> float:
        c = sample_couplings(spec, rng.substream(i))
        return max_energy(c, method)[0]

    values = np.array(_pool_map(one, range(n_samples), threads))
    se = float(values.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    report.add(f"max_energy_{method}", float(values.mean()), std_error=se,
               n_samples=n_samples)


def _cmd_parisi(resolved, spec, report, out_dir, threads):
    _single_type_mixture(spec)
    if spec.kind != "sk":
        raise ValidationError("the Parisi minimizer covers the SK mixture")
    beta = resolved["run.beta"]
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    k = resolved["run.k"]
    if k < 1:
        raise ValidationError("k must be >= 1")
    res = minimize_parisi(beta, k, n_starts=resolved["run.n_starts"],
                          seed=resolved["run.seed"],
                          final_order=resolved["run.quad_order"])
    if not np.isfinite(res.value):
        raise NumericalError("minimizer produced a non-finite value")
    _write_json(os.path.join(out_dir, "minimizer_report.json"), {
        "atoms": list(res.measure.atoms),
        "weights": list(res.measure.weights),
        "value": res.value,
        "converged": res.converged,
        "starts": [{"theta0": t0, "best": best} for t0, best in res.starts],
        "solver": {
            "method": "nelder-mead multi-start",
            "k": k,
            "n_starts": resolved["run.n_starts"],
            "quad_order": resolved["run.quad_order"],
            "seed": resolved["run.seed"],
        },
    })
    report.add("parisi_value", res.value, beta=beta)
    if not res.converged:
        raise NumericalError("one or more minimizer starts did not converge")


def _cmd_hopf_lax(resolved, spec, report, out_dir, threads):
    mixture = _single_type_mixture(spec)
    t, h = resolved["run.t"], resolved["run.h"]
    if t < 0 or h < 0:
        raise ValidationError("t and h must be >= 0")
    q = StepPath.constant(h, resolved["run.grid_m"])
    value, _, converged = hopf_lax(t, q, mixture,
                                   quad_order=resolved["run.quad_order"],
                                   n_starts=resolved["run.n_starts"],
                                   seed=resolved["run.seed"], full_output=True)
    report.add("hopf_lax", value, t=t, h1=h)
    if h == 0.0:
        report.add("limit_free_energy", limit_free_energy_from_hj(value, t, mixture),
                   t=t, h1=h)
    if not (converged and np.isfinite(value)):
        raise NumericalError("hopf-lax maximization did not converge")


def _path_dict(q):
    if isinstance(q, PathPair):
        return {"q1": list(q.q1.values), "q2": list(q.q2.values)}
    return {"q": list(q.values)}


def _cmd_characteristics(resolved, spec, report, out_dir, threads):
    t_min, t_max = resolved["run.t_min"], resolved["run.t_max"]
    steps = resolved["run.t_steps"]
    if not 0 < t_min <= t_max:
        raise ValidationError("need 0 < t_min <= t_max")
    if steps < 1:
        raise ValidationError("t_steps must be >= 1")
    m = resolved["run.grid_m"]
    if m < 1:
        raise ValidationError("grid_m must be >= 1")
    h = resolved["run.h"]
    if spec.is_bipartite:
        model = "bipartite"
        target = PathPair(StepPath.constant(h, m),
                          StepPath.constant(resolved["run.h2"], m))
    else:
        model = spec.mixture
        target = StepPath.constant(h, m)
    ts = np.linspace(t_min, t_max, steps)

    def scan(t: float):
        return characteristics_through(t, target, model,
                                       quad_order=resolved["run.quad_order"],
                                       n_starts=resolved["run.n_starts"],
                                       seed=resolved["run.seed"])

    all_preds = _pool_map(scan, [float(t) for t in ts], threads)
    scan_rows, dump = [], []
    for t, preds in zip(ts, all_preds):
        values = [p.predicted_value for p in preds]
        sources = b"".join(
            ",".join(_g17(v) for layer in
                     ([p.source.q1.values, p.source.q2.values]
                      if isinstance(p.source, PathPair) else [p.source.values])
                     for v in layer).encode() + b";"
            for p in preds)
        scan_rows.append((float(t), m, len(preds),
                          min(values) if values else None,
                          max(values) if values else None,
                          hashlib.sha256(sources).hexdigest()[:12]))
        dump.append({
            "t": float(t),
            "predictions": [{
                "source": _path_dict(p.source),
                "target": _path_dict(p.target),
                "predicted_value": p.predicted_value,
                "gradient": [list(g) for g in p.gradient],
            } for p in preds],
        })
    _write_csv(os.path.join(out_dir, "scan.csv"),
               ("t", "grid_m", "n_predictions", "value_min", "value_max",
                "source_hash"), scan_rows)
    _write_json(os.path.join(out_dir, "predictions.json"),
                {"selected": None, "scans": dump})
    for t, preds in zip(ts, all_preds):
        for j, p in enumerate(preds):
            report.add(f"characteristic_value_{j}", p.predicted_value, t=float(t))


def _cmd_sample(resolved, spec, report, out_dir, threads):
    if spec.is_bipartite:
        raise ValidationError("overlap sampling covers single-type models only")
    beta = resolved["run.beta"]
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    mode = resolved["run.mode"]
    if mode not in ("exact", "mcmc"):
        raise ValidationError(f"unknown mode {mode!r}")
    sweeps = resolved["run.sweeps"]
    epsilon = resolved["run.epsilon"]
    if epsilon <= 0:
        raise ValidationError("epsilon must be > 0")
    rng = RandomStream(resolved["run.seed"])
    c = sample_couplings(spec, rng.substream(0))
    try:
        stats = overlap_distribution(c, beta, mode, sweeps=sweeps,
                                     rng=rng.substream(1),
                                     tempering=resolved["run.tempering"])
        defects = ultrametric_defects(c, beta, epsilon, mode, sweeps=sweeps,
                                      rng=rng.substream(2),
                                      tempering=resolved["run.tempering"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if stats.masses is not None:
        _write_csv(os.path.join(out_dir, "histogram.csv"),
                   ("bin_lo", "bin_hi", "mass"),
                   [(float(lo), float(hi), float(mass))
                    for lo, hi, mass in zip(stats.bin_edges[:-1],
                                            stats.bin_edges[1:], stats.masses)])
    quants = dict(defects.defect_quantiles)
    _write_csv(os.path.join(out_dir, "defects.csv"),
               ("epsilon", "violation_fraction", "q50", "q90", "q99"),
               [(defects.epsilon, defects.violation_fraction,
                 quants[0.5], quants[0.9], quants[0.99])])
    n = stats.n_samples or None
    report.add("overlap_moment1", stats.moment1, std_error=stats.moment1_std_error,
               n_samples=n, beta=beta)
    report.add("overlap_moment2", stats.moment2, std_error=stats.moment2_std_error,
               n_samples=n, beta=beta)
    report.add("ultrametric_violation_fraction", defects.violation_fraction,
               std_error=defects.violation_std_error or None,
               n_samples=defects.n_samples or None, beta=beta)


def _cmd_moments(resolved, spec, report, out_dir, threads):
    beta = resolved["run.beta"]
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    n = resolved["run.n"]
    try:
        value = replica_moment_exact(spec, beta, n)
    except (ValueError, NotImplementedError) as exc:
        raise ValidationError(str(exc)) from exc
    report.add(f"replica_moment_n{n}", value, beta=beta)


def _cmd_check(resolved, spec, report, out_dir, threads):
    t, h = resolved["run.t"], resolved["run.h"]
    if t < 0 or h < 0:
        raise ValidationError("t and h must be >= 0")
    hs = (h, resolved["run.h2"]) if spec.is_bipartite else (h,)
    try:
        chk = derivative_identity_check(spec, t, hs,
                                        quad_order=resolved["run.quad_order"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    h1 = hs[0]
    h2 = hs[1] if spec.is_bipartite else None
    report.add("derivative_residual_t", chk.residual_t, t=t, h1=h1, h2=h2)
    report.add("derivative_residual_h", chk.residual_h, t=t, h1=h1, h2=h2)
    report.add("overlap_variance", chk.overlap_variance, t=t, h1=h1, h2=h2)
    tol = resolved["run.tolerance"]
    if max(chk.residual_t, chk.residual_h) > tol:
        raise NumericalError(
            f"derivative residuals exceed tolerance {tol:g}: "
            f"t {chk.residual_t:.3e}, h {chk.residual_h:.3e}")


_DISPATCH = {
    "enumerate": _cmd_enumerate,
    "maximize": _cmd_maximize,
    "parisi": _cmd_parisi,
    "hopf-lax": _cmd_hopf_lax,
    "characteristics": _cmd_characteristics,
    "sample": _cmd_sample,
    "moments": _cmd_moments,
    "check": _cmd_check,
}


# ---------------------------------------------------------------------------
# runner

def run(command: str, config_path: str, threads: int = 1,
        out_dir=None) -> int:
    """Execute one command; returns the process exit code."""
    try:
        if command not in COMMANDS:
            raise ValidationError(
                f"unknown command {command!r}; valid commands: {', '.join(COMMANDS)}")
        if threads < 1:
            raise ValidationError("threads must be >= 1")
        flat = _load_config(config_path)
        resolved = _resolve(command, flat)
        out = out_dir or resolved.get("run.out", "reports")
        os.makedirs(out, exist_ok=True)
        spec = _model_spec(resolved)
        cfg_hash = _config_hash(resolved)
        report = _Report(spec, resolved["run.seed"], cfg_hash)
        code = EXIT_OK
        message = None
        try:
            _DISPATCH[command](resolved, spec, report, out, threads)
        except NumericalError as exc:
            code, message = EXIT_NUMERICAL, str(exc)
        report.write(out)
        _write_json(os.path.join(out, "manifest.json"), {
            "command": command,
            "config": {k: v for k, v in sorted(resolved.items()) if k != "command"},
            "seed": resolved["run.seed"],
            "config_hash": cfg_hash,
            "threads": threads,
            "build": {
                "package": "spinglass",
                "version": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        })
        if message is not None:
            print(message, file=sys.stderr)
        return code
    except ValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spinglass",
        description="Spin-glass free-energy experiments from flat INI configs.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the INI config")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("SPINGLASS_THREADS", "1")),
                        help="worker pool size (env SPINGLASS_THREADS)")
    parser.add_argument("--out", default=None, help="output directory override")
    args = parser.parse_args(argv)
    return run(args.command, args.config, threads=args.threads, out_dir=args.out)


if __name__ == "__main__":
    sys.exit(main())

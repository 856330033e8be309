"""Error metrics and Monte Carlo strong-convergence experiments.

The harness samples the driver once per Monte Carlo path at the reference
resolution, integrates the reference trajectory, restricts the same
realization to every coarse level, and aggregates maximum mean-square
errors (MMSE) with a log-log least-squares slope fit.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .errors import DomainError, InternalError, ProtocolError
from .fbm import UniformGrid, restrict, sample_path, validate_hurst
from .problems import (
    CommutativityClass,
    classify_commutativity,
    default_probe_points,
)
from .schemes import (
    SolverConfig,
    Trajectory,
    integrate,
    integrate_batch,
    resolve_scheme,
)

HOLDER_MAX_NODES = 4096

TARGET_RATES = {
    CommutativityClass.NONCOMMUTATIVE: lambda h: 2.0 * h - 0.5,
    CommutativityClass.DIFFUSION_COMMUTATIVE: lambda h: h + 0.5,
    CommutativityClass.FULLY_COMMUTATIVE: lambda h: 2.0 * h,
}


@dataclass(frozen=True)
class ErrorSample:
    """Pathwise errors of a coarse trajectory against a fine reference."""

    level: int
    max_node_error: float
    sup_interp_error: float


@dataclass(frozen=True)
class ConvergenceReport:
    hurst: float
    scheme_id: str
    ref_scheme_id: str
    levels: list  # of (n, h, mmse)
    slope: float
    slope_stderr: float
    target_rate: float
    commutativity: str
    paths: int
    seed: int
    resampled: int
    mode: str
    problem: str
    ref_n: int
    sampler: str

    def as_dict(self):
        return {
            "hurst": self.hurst,
            "scheme": self.scheme_id,
            "ref_scheme": self.ref_scheme_id,
            "problem": self.problem,
            "paths": self.paths,
            "seed": self.seed,
            "mode": self.mode,
            "sampler": self.sampler,
            "ref_n": self.ref_n,
            "levels": [
                {"n": n, "h": h, "mmse": m} for (n, h, m) in self.levels
            ],
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "target_rate": self.target_rate,
            "commutativity": self.commutativity,
            "resampled": self.resampled,
        }

    def to_json(self, **extra):
        payload = self.as_dict()
        payload.update(extra)
        return json.dumps(payload, indent=2)

    def write_csv(self, stream):
        stream.write("h,mmse\n")
        for _, h, mmse in self.levels:
            stream.write(f"{h!r},{mmse!r}\n")


def holder_seminorm_discrete(times, values, beta, start=0, stop=None):
    """Discrete Hoelder seminorm: max |f_v - f_u| / (v - u)^beta over node
    pairs u < v inside [start, stop] (node indices)."""
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    stop = times.size if stop is None else stop
    times = times[start:stop]
    values = values[start:stop]
    n = times.size
    if n < 2:
        raise DomainError("range must contain at least 2 nodes")
    if n > HOLDER_MAX_NODES + 1:
        raise DomainError(
            f"range has {n} nodes; guard is {HOLDER_MAX_NODES + 1}"
        )
    best = 0.0
    for lag in range(1, n):
        diff = np.linalg.norm(values[lag:] - values[:-lag], axis=1)
        dt = times[lag:] - times[:-lag]
        best = max(best, float(np.max(diff / dt**beta)))
    return best


def strong_error(ref, coarse, mode="nodes"):
    """Pathwise error of a coarse trajectory against a fine reference.

    Both trajectories must come from the same driver realization (checked
    through the path seed record); the coarse grid must divide the fine one.
    """
    if mode not in ("nodes", "interp"):
        raise DomainError(f"mode must be 'nodes' or 'interp', got {mode!r}")
    if ref.path_record != coarse.path_record:
        raise ProtocolError(
            "reference and coarse trajectories come from different "
            "driver realizations"
        )
    if not np.isclose(ref.grid.horizon, coarse.grid.horizon):
        raise ProtocolError("trajectories have different horizons")
    if ref.grid.n % coarse.grid.n != 0:
        raise ProtocolError(
            f"coarse grid n={coarse.grid.n} does not divide "
            f"reference n={ref.grid.n}"
        )
    factor = ref.grid.n // coarse.grid.n
    node_err = np.linalg.norm(
        ref.states[::factor] - coarse.states, axis=1
    )
    interp = _interpolate_states(coarse.states, factor)
    interp_err = np.linalg.norm(ref.states - interp, axis=1)
    return ErrorSample(
        level=coarse.grid.n,
        max_node_error=float(node_err.max()),
        sup_interp_error=float(interp_err.max()),
    )


def _interpolate_states(states, factor):
    """Linear interpolation of coarse node states onto the fine grid.

    states (..., nc+1, m) -> (..., nc*factor+1, m)."""
    weights = np.arange(factor) / factor
    left = states[..., :-1, None, :]
    right = states[..., 1:, None, :]
    cells = left + weights[:, None] * (right - left)
    flat = cells.reshape(states.shape[:-2] + (-1, states.shape[-1]))
    return np.concatenate([flat, states[..., -1:, :]], axis=-2)


def fit_loglog_slope(hs, errors):
    """OLS slope p of log2(err) = p log2(h) + c, with standard error."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.size < 3:
        raise DomainError("need at least 3 levels to fit a slope")
    if np.any(errors <= 0):
        raise DomainError("errors must be strictly positive for a log fit")
    x = np.log2(hs)
    y = np.log2(errors)
    xm = x - x.mean()
    slope = float(xm @ (y - y.mean()) / (xm @ xm))
    resid = y - (y.mean() + slope * xm)
    dof = max(1, x.size - 2)
    stderr = float(np.sqrt(resid @ resid / dof / (xm @ xm)))
    return slope, stderr


def target_rate_for(problem, hurst, tol=1e-8, probe_points=None):
    """Theoretical strong rate selected by the commutativity probe verdict."""
    points = (
        probe_points
        if probe_points is not None
        else default_probe_points(problem)
    )
    verdict = classify_commutativity(problem.field, points, tol)
    return TARGET_RATES[verdict](hurst), verdict


def _level_errors(field, y0, paths_values, ref_states, level_n, ref_n, scheme,
                  cfg, mode, horizon):
    """Errors of one coarse level for a batch of paths. Returns (err, failed)."""
    factor = ref_n // level_n
    coarse_values = paths_values[:, ::factor, :]
    incs = np.diff(coarse_values, axis=1)
    states, failed, _ = integrate_batch(field, y0, incs, scheme, cfg)
    if mode == "nodes":
        err = np.linalg.norm(
            ref_states[:, ::factor] - states, axis=2
        ).max(axis=1)
    else:
        interp = _interpolate_states(states, factor)
        err = np.linalg.norm(ref_states - interp, axis=2).max(axis=1)
    return err, failed


def _study_chunk(problem, scheme, ref_scheme, hurst, levels, ref_n, sampler,
                 seed_seqs, cfg, mode):
    """Run a batch of Monte Carlo paths; returns (errors (B, L), failed (B,))."""
    grid = UniformGrid(problem.horizon, ref_n)
    d = problem.field.d
    values = np.stack(
        [
            sample_path(grid, d, hurst, ss, sampler=sampler).values
            for ss in seed_seqs
        ]
    )
    incs = np.diff(values, axis=1)
    ref_states, failed, _ = integrate_batch(
        problem.field, problem.y0, incs, ref_scheme, cfg
    )
    errors = np.empty((len(seed_seqs), len(levels)))
    for idx, level_n in enumerate(levels):
        err, bad = _level_errors(
            problem.field, problem.y0, values, ref_states, level_n, ref_n,
            scheme, cfg, mode, problem.horizon,
        )
        errors[:, idx] = err
        failed |= bad
    return errors, failed


def convergence_study(problem, scheme, hurst, levels, ref_n, paths, seed, *,
                      ref_scheme=None, mode="nodes", sampler="circulant",
                      cfg=None, chunk_size=64, threads=None):
    """Monte Carlo estimate of the strong convergence rate.

    For every sample path the driver is generated once at ref_n steps; the
    reference trajectory uses ``ref_scheme`` (default: the scheme itself) at
    that resolution and the same realization is restricted to every coarse
    level. Path p uses the RNG substream (seed, p), so results do not depend
    on chunking or thread scheduling. Paths whose integration fails are
    resampled from fresh substreams; if more than 5% need resampling the
    study fails loudly.
    """
    hurst = validate_hurst(hurst)
    levels = sorted(int(n) for n in levels)
    if len(levels) < 3:
        raise DomainError("need at least 3 levels for a slope fit")
    if paths < 2:
        raise DomainError("need at least 2 sample paths")
    for n in levels:
        if ref_n % n != 0 or n >= ref_n:
            raise DomainError(
                f"ref_n={ref_n} must be a proper multiple of every level "
                f"(offending level {n})"
            )
    cfg = cfg or SolverConfig()
    scheme_id, _, _ = resolve_scheme(scheme)
    ref_scheme = scheme if ref_scheme is None else ref_scheme
    ref_scheme_id, _, _ = resolve_scheme(ref_scheme)
    if threads is None:
        threads = int(os.environ.get("FBMSDE_THREADS", "1"))

    def run(substreams):
        seqs = [
            np.random.SeedSequence(entropy=seed, spawn_key=(i,))
            for i in substreams
        ]
        return _study_chunk(
            problem, scheme, ref_scheme, hurst, levels, ref_n, sampler,
            seqs, cfg, mode,
        )

    chunks = [
        range(start, min(start + chunk_size, paths))
        for start in range(0, paths, chunk_size)
    ]
    if threads > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    errors = np.concatenate([r[0] for r in results])
    failed = np.concatenate([r[1] for r in results])
    errors = errors[~failed]
    resampled = int(failed.sum())
    max_resamples = paths  # hard stop well past the 5% failure threshold
    next_substream = paths
    while errors.shape[0] < paths:
        if resampled > max_resamples:
            raise ProtocolError(
                f"study aborted: {resampled} resampled paths exceed the "
                f"hard stop ({max_resamples})"
            )
        batch = min(chunk_size, paths - errors.shape[0])
        errs, bad = run(range(next_substream, next_substream + batch))
        next_substream += batch
        resampled += int(bad.sum())
        errors = np.concatenate([errors, errs[~bad]])
    errors = errors[:paths]
    if resampled > 0.05 * paths:
        raise ProtocolError(
            f"study failed: {resampled} of {paths} paths needed resampling "
            "(> 5%); the grid is too coarse for this scheme"
        )

    mmse = np.array(
        [math.sqrt(math.fsum(errors[:, j] ** 2) / paths)
         for j in range(len(levels))]
    )
    if np.any(mmse <= 0.0):
        raise InternalError(
            "identically-zero MMSE at some level indicates a harness bug"
        )
    hs = np.array([problem.horizon / n for n in levels])
    slope, stderr = fit_loglog_slope(hs, mmse)
    target, verdict = target_rate_for(problem, hurst)
    return ConvergenceReport(
        hurst=hurst,
        scheme_id=scheme_id,
        ref_scheme_id=ref_scheme_id,
        levels=[(n, float(h), float(m))
                for n, h, m in zip(levels, hs, mmse)],
        slope=slope,
        slope_stderr=stderr,
        target_rate=target,
        commutativity=verdict.value,
        paths=paths,
        seed=seed,
        resampled=resampled,
        mode=mode,
        problem=problem.name,
        ref_n=ref_n,
        sampler=sampler,
    )


def levy_discrepancy_rate(hurst, levels, refinement=16, paths=500, seed=0, *,
                          variant="area", sampler="circulant",
                          sampling_only=False, horizon=1.0):
    """Empirical decay rate of the symmetrized second-level increment sums.

    variant="area": both integrands stochastic (expected exponent 2H - 1/2);
    variant="time": inner integrand is time (expected exponent H + 1/2).
    Inner integrals are approximated by left Riemann sums on a grid refined
    ``refinement`` times; one fine realization is shared by all levels.
    """
    hurst = validate_hurst(hurst, sampling_only=sampling_only)
    if refinement < 16:
        raise DomainError(f"refinement must be >= 16, got {refinement}")
    if variant not in ("area", "time"):
        raise DomainError(f"variant must be 'area' or 'time', got {variant!r}")
    levels = sorted(int(n) for n in levels)
    if len(levels) < 3:
        raise DomainError("need at least 3 levels for a slope fit")
    n_max = max(levels)
    for n in levels:
        if n_max % n != 0:
            raise DomainError("levels must all divide the largest level")
    n_fine = n_max * refinement
    grid = UniformGrid(horizon, n_fine)
    d = 3 if variant == "area" else 2
    stats_sq = np.zeros(len(levels))
    for p in range(paths):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(p,))
        path = sample_path(
            grid, d, hurst, ss, sampler=sampler, sampling_only=sampling_only
        )
        outer = path.values[:, 1]  # X^2
        inner = path.values[:, 2] if variant == "area" else path.values[:, 0]
        d_outer = np.diff(outer)
        for idx, n in enumerate(levels):
            g = n_fine // n
            left = inner[:-1].reshape(n, g)
            lo = inner[:-1:g][:, None]  # inner value at cell start
            hi = inner[g::g][:, None]  # inner value at cell end
            cells = ((2.0 * left - lo - hi) * d_outer.reshape(n, g)).sum()
            stats_sq[idx] += cells**2
    l2 = np.sqrt(stats_sq / paths)
    hs = np.array([horizon / n for n in levels])
    slope, stderr = fit_loglog_slope(hs, l2)
    samples = list(zip(levels, hs.tolist(), l2.tolist()))
    return slope, stderr, samples


def deterministic_order(problem, scheme, levels, exact_terminal, cfg=None):
    """Global order of a scheme on a drift-only (d=1) problem.

    Integrates on time-only drivers at each level, measures the terminal
    error against the closed form, and fits the log-log slope.
    """
    errs = []
    hs = []
    for n in levels:
        grid = UniformGrid(problem.horizon, int(n))
        path = sample_path(grid, 1, 0.75, seed=0, sampler="cholesky")
        traj = integrate(problem, path, scheme, cfg)
        errs.append(
            float(np.linalg.norm(traj.states[-1] - exact_terminal))
        )
        hs.append(grid.h)
    return fit_loglog_slope(hs, errs)

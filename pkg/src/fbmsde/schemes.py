"""One-step integrators on a fixed driving path.

General s-stage Runge-Kutta methods (explicit by forward substitution,
implicit by fixed-point iteration on the stage values) and simplified
step-N Euler schemes (N = 2, 3). The stepping core is batched over
independent sample paths; the public single-path API wraps it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import (
    CapabilityError,
    DivergenceError,
    DomainError,
    NonconvergenceError,
    ProtocolError,
)
from .fbm import SeedRecord, UniformGrid
from .problems import eval_field, field_hessian, field_jacobian

ORDER_CONDITION_TOL = 1e-12


@dataclass(frozen=True)
class ButcherTableau:
    """Runge-Kutta coefficients (a_ij, b_i); c_i = sum_j a_ij is derived."""

    name: str
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError(f"tableau a must be square, got shape {a.shape}")
        if b.shape != (a.shape[0],):
            raise DomainError(
                f"tableau b has length {b.size}, expected {a.shape[0]}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def s(self):
        return self.b.size

    @property
    def c(self):
        return self.a.sum(axis=1)

    @property
    def explicit(self):
        return bool(np.all(np.triu(self.a) == 0.0))


@dataclass(frozen=True)
class OrderConditionReport:
    """Checks sum b_i = 1 and sum b_i c_i = 1/2 on exact coefficients."""

    tableau: str
    sum_b: float
    sum_bc: float
    satisfies_41: bool
    equivalent_form_residual: float

    def as_dict(self):
        return {
            "tableau": self.tableau,
            "sum_b": self.sum_b,
            "sum_bc": self.sum_bc,
            "satisfies_41": self.satisfies_41,
            "equivalent_form_residual": self.equivalent_form_residual,
        }


@dataclass(frozen=True)
class SolverConfig:
    """Fixed-point solve parameters for implicit tableaus."""

    fp_tol: float = 1e-12
    fp_max_iter: int = 100
    divergence_guard: float = 1e8

    def __post_init__(self):
        if not self.fp_tol > 0:
            raise DomainError("fp_tol must be positive")
        if self.fp_max_iter < 1:
            raise DomainError("fp_max_iter must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    """Numerical solution on a grid together with its provenance."""

    grid: UniformGrid
    states: np.ndarray = dc_field(repr=False)  # (n+1, m)
    scheme_id: str
    path_record: Optional[SeedRecord] = None
    stage_diagnostics: Optional[list] = None  # per-step iteration counts


def check_order_conditions(tab):
    sum_b = float(np.sum(tab.b))
    sum_bc = float(tab.b @ tab.c)
    # residual of the equivalent form sum_{i,j} b_i (b_j - 2 a_ij)
    residual = float(np.sum(tab.b * (sum_b - 2.0 * tab.c)))
    ok = (
        abs(sum_b - 1.0) <= ORDER_CONDITION_TOL
        and abs(sum_bc - 0.5) <= ORDER_CONDITION_TOL
    )
    return OrderConditionReport(tab.name, sum_b, sum_bc, ok, residual)


BUILTIN_TABLEAUS = {
    "euler": ButcherTableau("euler", [[0.0]], [1.0]),
    "midpoint": ButcherTableau("midpoint", [[0.5]], [1.0]),
    "heun": ButcherTableau("heun", [[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5]),
    "rk4": ButcherTableau(
        "rk4",
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ],
        [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0],
    ),
}

STEP_N_SCHEMES = {"step2": 2, "step3": 3}


def load_tableau(source):
    """Load a tableau from a JSON file: {"s", "a", "b", "name"}.

    Coefficients may be given as numbers or exact fraction strings ("1/6").
    """
    with open(source, encoding="utf-8") as fh:
        raw = json.load(fh)

    def num(x):
        return float(Fraction(x)) if isinstance(x, str) else float(x)

    a = [[num(x) for x in row] for row in raw["a"]]
    b = [num(x) for x in raw["b"]]
    tab = ButcherTableau(raw.get("name", "file"), a, b)
    if tab.s != raw.get("s", tab.s):
        raise DomainError("tableau file: 's' does not match coefficient shapes")
    return tab


def resolve_scheme(scheme):
    """Normalize a scheme descriptor to (scheme_id, kind, payload).

    kind is "rk" with a ButcherTableau payload, or "stepn" with the order N.
    Accepted descriptors: a ButcherTableau, a builtin name, "step2"/"step3",
    or a ("stepn", N) pair.
    """
    if isinstance(scheme, ButcherTableau):
        return scheme.name, "rk", scheme
    if isinstance(scheme, tuple) and len(scheme) == 2 and scheme[0] == "stepn":
        n = int(scheme[1])
        if n < 2:
            raise DomainError("step-N Euler needs N >= 2")
        if n > 3:
            raise CapabilityError(
                f"step-{n} Euler unsupported: needs derivatives of order {n - 1}"
            )
        return f"step{n}", "stepn", n
    if isinstance(scheme, str):
        if scheme in STEP_N_SCHEMES:
            return scheme, "stepn", STEP_N_SCHEMES[scheme]
        if scheme in BUILTIN_TABLEAUS:
            tab = BUILTIN_TABLEAUS[scheme]
            return tab.name, "rk", tab
        raise DomainError(
            f"unknown scheme {scheme!r}; builtins: "
            f"{sorted(BUILTIN_TABLEAUS) + sorted(STEP_N_SCHEMES)}"
        )
    raise DomainError(f"cannot interpret scheme descriptor {scheme!r}")


# --- batched stepping core --------------------------------------------------
#
# States are (B, m), increments (B, d). Failed paths (nonconvergence or
# divergence) are reported through a boolean mask instead of raising, so a
# Monte Carlo batch can drop and resample individual paths.


def _stage_sum(field, z, dx):
    """K_j = V(Z_j) dX for stage states z (B, m): returns (B, m)."""
    return np.einsum("bmd,bd->bm", eval_field(field, z), dx)


def _rk_step_batch(tab, field, y, dx, cfg):
    """One RK step on a batch. Returns (y_next, iterations, failed_mask)."""
    b_count, m = y.shape
    s = tab.s
    a, b = tab.a, tab.b
    if tab.explicit:
        k = np.empty((s, b_count, m))
        for i in range(s):
            zi = y.copy()
            for j in range(i):
                if a[i, j] != 0.0:
                    zi += a[i, j] * k[j]
            k[i] = _stage_sum(field, zi, dx)
        y_next = y + np.einsum("i,ibm->bm", b, k)
        failed = ~np.isfinite(y_next).all(axis=1)
        return y_next, 0, failed

    z = np.broadcast_to(y, (s, b_count, m)).copy()
    iterations = 0
    converged = np.zeros(b_count, dtype=bool)
    diverged = np.zeros(b_count, dtype=bool)
    k = np.empty((s, b_count, m))
    for iterations in range(1, cfg.fp_max_iter + 1):
        for j in range(s):
            k[j] = _stage_sum(field, z[j], dx)
        z_new = y[None] + np.einsum("ij,jbm->ibm", a, k)
        delta = np.abs(z_new - z).max(axis=(0, 2))
        z = z_new
        diverged |= ~np.isfinite(z).all(axis=(0, 2)) | (
            np.abs(z).max(axis=(0, 2)) > cfg.divergence_guard
        )
        converged = (delta <= cfg.fp_tol) | diverged
        if converged.all():
            break
    stalled = ~converged & ~diverged
    if stalled.any():
        # the stage system is solvable even when the Picard map is not a
        # contraction; rescue stalled paths with Newton from Z_i = y
        idx = np.nonzero(stalled)[0]
        z_n, ok = _newton_stage_solve(tab, field, y[idx], dx[idx], cfg)
        z[:, idx[ok]] = z_n[:, ok]
        stalled[idx[ok]] = False
    failed = diverged | stalled
    for j in range(s):
        k[j] = _stage_sum(field, z[j], dx)
    y_next = y + np.einsum("i,ibm->bm", b, k)
    failed |= ~np.isfinite(y_next).all(axis=1)
    return y_next, iterations, failed


def _newton_stage_solve(tab, field, y, dx, cfg, max_iter=50):
    """Newton iteration on the stacked stage system, started from Z_i = y.

    y (B, m), dx (B, d); returns (z (s, B, m), converged (B,))."""
    b_count, m = y.shape
    s = tab.s
    a = tab.a
    sm = s * m
    z = np.broadcast_to(y, (s, b_count, m)).copy()
    converged = np.zeros(b_count, dtype=bool)
    eye = np.eye(sm)
    for _ in range(max_iter):
        flat = z.reshape(s * b_count, m)
        v = eval_field(field, flat).reshape(s, b_count, m, field.d)
        k = np.einsum("jbmd,bd->jbm", v, dx)
        resid = z - y[None] - np.einsum("ij,jbm->ibm", a, k)
        jac = field_jacobian(field, flat).reshape(
            s, b_count, field.d, m, m
        )
        jk = np.einsum("jbdpq,bd->jbpq", jac, dx)  # d(V(Z_j) dX)/dZ_j
        full = np.zeros((b_count, s, m, s, m))
        for i in range(s):
            for j in range(s):
                if a[i, j] != 0.0:
                    full[:, i, :, j, :] -= a[i, j] * jk[j]
        full = full.reshape(b_count, sm, sm) + eye
        rhs = np.swapaxes(resid, 0, 1).reshape(b_count, sm)
        try:
            step = np.linalg.solve(full, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        if not np.isfinite(step).all():
            break
        z = z - np.swapaxes(step.reshape(b_count, s, m), 0, 1)
        done = np.abs(step).max(axis=1) <= cfg.fp_tol
        wild = np.abs(z).max(axis=(0, 2)) > cfg.divergence_guard
        converged = done & ~wild
        if (done | wild).all():
            break
    converged &= np.isfinite(z).all(axis=(0, 2))
    return z, converged


def _contract_jac(jac, v, dx):
    """sum_l (J_l v) dX^l for jac (B, d, m, m), v (B, m), dx (B, d)."""
    return np.einsum("bdpq,bq,bd->bp", jac, v, dx)


def _step_n_batch(field, y, dx, order):
    """One simplified step-N Euler step on a batch: (y_next, failed_mask).

    Term of word length w carries weight 1/w!.
    """
    v = eval_field(field, y)  # (B, m, d)
    u = np.einsum("bmd,bd->bm", v, dx)  # V(y) dX
    y_next = y + u
    if order >= 2:
        jac = field_jacobian(field, y)  # (B, d, m, m)
        y_next = y_next + 0.5 * _contract_jac(jac, u, dx)
    if order >= 3:
        hess = field_hessian(field, y)
        if hess is None:
            raise CapabilityError(
                "step-3 Euler needs a second-derivative (hessian) oracle"
            )
        quad = np.einsum("bdpqr,bq,br,bd->bp", hess, u, u, dx)
        nested = _contract_jac(jac, _contract_jac(jac, u, dx), dx)
        y_next = y_next + (quad + nested) / 6.0
    failed = ~np.isfinite(y_next).all(axis=1)
    return y_next, failed


def integrate_batch(field, y0, increments, scheme, cfg=None):
    """Integrate a batch of paths sharing one problem and scheme.

    increments: (B, n, d). Returns (states (B, n+1, m), failed_mask (B,),
    iteration_counts or None). Failed paths keep the last finite state and
    are frozen (their remaining increments are ignored).
    """
    cfg = cfg or SolverConfig()
    scheme_id, kind, payload = resolve_scheme(scheme)
    increments = np.asarray(increments, dtype=float)
    b_count, n, d = increments.shape
    if d != field.d:
        raise ProtocolError(
            f"driver dimension {d} does not match field d={field.d}"
        )
    states = np.empty((b_count, n + 1, field.m))
    states[:, 0] = y0
    y = np.tile(np.asarray(y0, dtype=float), (b_count, 1))
    failed = np.zeros(b_count, dtype=bool)
    iteration_counts = [] if kind == "rk" and not payload.explicit else None
    dx_buf = increments.copy()
    for k in range(n):
        dx = dx_buf[:, k]
        if kind == "rk":
            y_new, iters, bad = _rk_step_batch(payload, field, y, dx, cfg)
            if iteration_counts is not None:
                iteration_counts.append(iters)
        else:
            y_new, bad = _step_n_batch(field, y, dx, payload)
        new_fail = bad & ~failed
        if new_fail.any():
            failed |= new_fail
            dx_buf[failed, k:, :] = 0.0
            y_new[failed] = y[failed]
        else:
            y_new[failed] = y[failed]
        y = y_new
        states[:, k + 1] = y
    return states, failed, iteration_counts


# --- single-path public API -------------------------------------------------


def rk_step(tab, field, y, dx, cfg=None):
    """One Runge-Kutta step. Returns (state, diagnostics dict)."""
    cfg = cfg or SolverConfig()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    if dx.size != field.d:
        raise DomainError(f"increment length {dx.size} != driver dim {field.d}")
    y_next, iters, failed = _rk_step_batch(
        tab, field, y[None], dx[None], cfg
    )
    if failed[0]:
        if np.abs(y_next).max() > cfg.divergence_guard or not np.isfinite(
            y_next
        ).all():
            raise DivergenceError("stage values exceeded the divergence guard")
        raise NonconvergenceError(
            f"fixed-point stage iteration did not converge in "
            f"{cfg.fp_max_iter} iterations (|dX| too large for contraction; "
            "refine the grid)",
            residual=float(np.abs(y_next[0] - y).max()),
        )
    return y_next[0], {"iterations": iters, "explicit": tab.explicit}


def step_n_euler_step(field, y, dx, order=2):
    """One simplified step-N Euler step (N = 2 or 3)."""
    if order < 2:
        raise DomainError("step-N Euler needs N >= 2")
    if order > 3:
        raise CapabilityError(
            f"step-{order} Euler unsupported: needs order-{order - 1} derivatives"
        )
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    if dx.size != field.d:
        raise DomainError(f"increment length {dx.size} != driver dim {field.d}")
    y_next, failed = _step_n_batch(field, y[None], dx[None], order)
    if failed[0]:
        raise DivergenceError("step-N Euler produced a non-finite state")
    return y_next[0]


def integrate(problem, path, scheme, cfg=None):
    """Apply the one-step map along a driving path; returns a Trajectory."""
    cfg = cfg or SolverConfig()
    if path.d != problem.field.d:
        raise ProtocolError(
            f"path has d={path.d}, problem expects d={problem.field.d}"
        )
    if not np.isclose(path.grid.horizon, problem.horizon):
        raise ProtocolError(
            f"path horizon {path.grid.horizon} != problem horizon "
            f"{problem.horizon}"
        )
    scheme_id, kind, payload = resolve_scheme(scheme)
    states, failed, iters = integrate_batch(
        problem.field, problem.y0, path.increments()[None], scheme, cfg
    )
    if failed[0]:
        # rerun step by step to attach the failing index
        y = problem.y0.copy()
        for k, dx in enumerate(path.increments()):
            try:
                if kind == "rk":
                    y, _ = rk_step(payload, problem.field, y, dx, cfg)
                else:
                    y = step_n_euler_step(problem.field, y, dx, payload)
            except (NonconvergenceError, DivergenceError) as exc:
                exc.step = k
                raise
        raise DivergenceError("non-finite trajectory")  # pragma: no cover
    return Trajectory(
        grid=path.grid,
        states=states[0],
        scheme_id=scheme_id,
        path_record=path.seed_record,
        stage_diagnostics=iters,
    )


def interpolate_linear(traj, t):
    """Piecewise-linear interpolation of a trajectory; exact at nodes."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    horizon = traj.grid.horizon
    if np.any(t_arr < 0) or np.any(t_arr > horizon):
        raise DomainError(f"time outside [0, {horizon}]")
    nodes = traj.grid.nodes()
    out = np.empty(t_arr.shape + (traj.states.shape[1],))
    for q in range(traj.states.shape[1]):
        out[..., q] = np.interp(t_arr, nodes, traj.states[:, q])
    # exact node values at nodes: np.interp already returns the node value
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return out[0]
    return out

"""SDE problems dY = V(Y) dX: vector fields, derivative oracles,
commutativity probing, and builtin benchmark problems."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class VectorField:
    """Vector field V: R^m -> R^{m x d}; column l is V_l.

    ``eval`` maps states of shape (..., m) to (..., m, d). When
    ``vectorized`` is false it is called one state at a time. Optional
    analytic oracles: ``jacobian`` maps (..., m) -> (..., d, m, m) with
    entry [l, p, q] = d V_l^p / d y^q, and ``hessian`` maps
    (..., m) -> (..., d, m, m, m) with [l, p, q, r] = d^2 V_l^p / dy^q dy^r
    (needed by step-3 Euler).
    """

    m: int
    d: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    vectorized: bool = True


@dataclass(frozen=True)
class SdeProblem:
    field: VectorField
    y0: np.ndarray
    horizon: float
    name: str = "custom"

    def __post_init__(self):
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if y0.shape != (self.field.m,):
            raise DomainError(
                f"y0 has length {y0.size}, field expects m={self.field.m}"
            )
        object.__setattr__(self, "y0", y0)


class CommutativityClass(enum.Enum):
    NONCOMMUTATIVE = "noncommutative"
    DIFFUSION_COMMUTATIVE = "diffusion_commutative"
    FULLY_COMMUTATIVE = "fully_commutative"


def eval_field(field, y):
    """Evaluate V on a batch of states, shape (..., m) -> (..., m, d)."""
    y = np.asarray(y, dtype=float)
    if field.vectorized:
        return np.asarray(field.eval(y), dtype=float)
    flat = y.reshape(-1, field.m)
    out = np.stack([np.asarray(field.eval(row), dtype=float) for row in flat])
    return out.reshape(y.shape[:-1] + (field.m, field.d))


def field_jacobian(field, y):
    """All Jacobians (dV_l)(y), shape (..., m) -> (..., d, m, m).

    Uses the analytic oracle when present, otherwise central finite
    differences with step 1e-6 * max(1, |y|).
    """
    y = np.asarray(y, dtype=float)
    if field.jacobian is not None:
        if field.vectorized:
            return np.asarray(field.jacobian(y), dtype=float)
        flat = y.reshape(-1, field.m)
        out = np.stack(
            [np.asarray(field.jacobian(row), dtype=float) for row in flat]
        )
        return out.reshape(y.shape[:-1] + (field.d, field.m, field.m))
    single = y.ndim == 1
    yb = y.reshape(-1, field.m)
    eps = FD_REL_STEP * np.maximum(1.0, np.linalg.norm(yb, axis=-1))
    jac = np.empty((yb.shape[0], field.d, field.m, field.m))
    for q in range(field.m):
        bump = np.zeros_like(yb)
        bump[:, q] = eps
        diff = (eval_field(field, yb + bump) - eval_field(field, yb - bump)) / (
            2.0 * eps[:, None, None]
        )
        jac[..., q] = np.swapaxes(diff, -1, -2)  # (B, d, m)
    return jac[0] if single else jac.reshape(y.shape[:-1] + jac.shape[1:])


def field_hessian(field, y):
    """Second derivatives, analytic oracle only; None when unavailable."""
    if field.hessian is None:
        return None
    y = np.asarray(y, dtype=float)
    if field.vectorized:
        return np.asarray(field.hessian(y), dtype=float)
    flat = y.reshape(-1, field.m)
    out = np.stack([np.asarray(field.hessian(row), dtype=float) for row in flat])
    return out.reshape(y.shape[:-1] + (field.d, field.m, field.m, field.m))


def directional_derivative(field, y, l, direction):
    """(dV_l)(y) . direction for column l (1-based)."""
    if not 1 <= l <= field.d:
        raise DomainError(f"column index {l} outside 1..{field.d}")
    y = np.asarray(y, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if field.jacobian is not None:
        jac = field_jacobian(field, y)
        return jac[l - 1] @ direction
    eps = FD_REL_STEP * max(1.0, float(np.linalg.norm(y)))
    scale = float(np.linalg.norm(direction))
    if scale == 0.0:
        return np.zeros(field.m)
    unit = direction / scale
    vp = eval_field(field, y + eps * unit)[..., l - 1]
    vm = eval_field(field, y - eps * unit)[..., l - 1]
    return scale * (vp - vm) / (2.0 * eps)


def validate_jacobian(field, points, rtol=1e-5):
    """Compare the analytic Jacobian oracle with central finite differences.

    Returns the worst relative deviation over the probe points.
    """
    if field.jacobian is None:
        raise DomainError("field has no jacobian oracle to validate")
    fd_field = VectorField(
        field.m, field.d, field.eval, vectorized=field.vectorized
    )
    worst = 0.0
    for y in points:
        exact = field_jacobian(field, np.asarray(y, dtype=float))
        approx = field_jacobian(fd_field, np.asarray(y, dtype=float))
        scale = max(1.0, float(np.abs(exact).max()))
        worst = max(worst, float(np.abs(exact - approx).max()) / scale)
    if worst > rtol:
        raise DomainError(
            f"jacobian oracle deviates from finite differences by {worst:.2e} "
            f"(> rtol {rtol:.2e})"
        )
    return worst


def commutativity_brackets(field, y):
    """Brackets B[l,l'] = dV_l V_l' - dV_l' V_l at one state, (d, d, m)."""
    v = eval_field(field, y)  # (m, d)
    jac = field_jacobian(field, y)  # (d, m, m)
    jv = np.einsum("lpq,qk->lkp", jac, v)  # jv[l, l', :] = J_l V_l'
    return jv - np.swapaxes(jv, 0, 1)


def classify_commutativity(field, probe_points, tol=1e-8):
    """Classify the field by probing the commutator at finitely many states.

    This is a numerical probe at len(probe_points) states, not a proof.
    """
    points = list(probe_points)
    if not points:
        raise DomainError("classify_commutativity needs a nonempty probe set")
    max_diffusion = 0.0
    max_full = 0.0
    for y in points:
        br = commutativity_brackets(field, np.asarray(y, dtype=float))
        norms = np.linalg.norm(br, axis=-1)
        max_full = max(max_full, float(norms.max()))
        if field.d > 2:
            max_diffusion = max(max_diffusion, float(norms[1:, 1:].max()))
    if max_full <= tol:
        return CommutativityClass.FULLY_COMMUTATIVE
    if max_diffusion <= tol:
        return CommutativityClass.DIFFUSION_COMMUTATIVE
    return CommutativityClass.NONCOMMUTATIVE


def default_probe_points(problem, count=100, spread=3.0, seed=0):
    """Random states around y0 used by default for commutativity probing."""
    rng = np.random.default_rng(seed)
    return problem.y0 + spread * rng.standard_normal((count, problem.field.m))


# --- builtin benchmark problems -------------------------------------------


def _paper5_eval(y):
    s = 3.0 * np.sin(y)
    c = 3.0 * np.cos(y)
    return np.stack([s, c, s], axis=-1)


def _paper5_jac(y):
    c = 3.0 * np.cos(y)
    s = -3.0 * np.sin(y)
    return np.stack([c, s, c], axis=-2)[..., None]


def _paper5_hess(y):
    s = -3.0 * np.sin(y)
    c = -3.0 * np.cos(y)
    return np.stack([s, c, s], axis=-2)[..., None, None]


def _paper5():
    field = VectorField(1, 3, _paper5_eval, _paper5_jac, _paper5_hess)
    return SdeProblem(field, np.array([5.0]), 1.0, name="paper5")


def _linear1d(rate=0.5):
    rate = float(rate)

    def ev(y):
        return np.stack([np.zeros_like(y), rate * y], axis=-1)

    def jac(y):
        zero = np.zeros_like(y)
        return np.stack([zero, np.full_like(y, rate)], axis=-2)[..., None]

    def hess(y):
        return np.zeros(y.shape[:-1] + (2, 1, 1, 1))

    field = VectorField(1, 2, ev, jac, hess)
    prob = SdeProblem(field, np.array([1.0]), 1.0, name="linear1d")
    object.__setattr__(prob, "rate", rate)
    return prob


def _bm_linear(rate=1.0):
    rate = float(rate)

    def ev(y):
        return (rate * y)[..., None]

    def jac(y):
        return np.full(y.shape[:-1] + (1, 1, 1), rate)

    def hess(y):
        return np.zeros(y.shape[:-1] + (1, 1, 1, 1))

    field = VectorField(1, 1, ev, jac, hess)
    prob = SdeProblem(field, np.array([5.0]), 1.0, name="bm-linear")
    object.__setattr__(prob, "rate", rate)
    return prob


def _noncommutative2d_eval(y):
    # V_2 = (y2, y1), V_3 = (0, y1): bracket [V_2, V_3] = (y1, -y2) != 0,
    # and J_2 V_2 = (y1, y2) != 0 so the classical Euler scheme is capped
    # at rate 2H-1 on this problem (a negative control for the order
    # conditions).
    out = np.zeros(y.shape[:-1] + (2, 3))
    out[..., 0, 1] = y[..., 1]
    out[..., 1, 1] = y[..., 0]
    out[..., 1, 2] = y[..., 0]
    return out


def _noncommutative2d_jac(y):
    jac = np.zeros(y.shape[:-1] + (3, 2, 2))
    jac[..., 1, 0, 1] = 1.0
    jac[..., 1, 1, 0] = 1.0
    jac[..., 2, 1, 0] = 1.0
    return jac


def _noncommutative2d_hess(y):
    return np.zeros(y.shape[:-1] + (3, 2, 2, 2))


def _noncommutative2d():
    field = VectorField(
        2, 3, _noncommutative2d_eval, _noncommutative2d_jac, _noncommutative2d_hess
    )
    return SdeProblem(field, np.array([1.0, 1.0]), 1.0, name="noncommutative2d")


BUILTIN_PROBLEMS = {
    "paper5": _paper5,
    "linear1d": _linear1d,
    "bm-linear": _bm_linear,
    "noncommutative2d": _noncommutative2d,
}


def builtin_problem(name, **params):
    """Builtin problem registry; see BUILTIN_PROBLEMS for names."""
    try:
        factory = BUILTIN_PROBLEMS[name]
    except KeyError:
        raise DomainError(
            f"unknown problem {name!r}; available: {sorted(BUILTIN_PROBLEMS)}"
        ) from None
    return factory(**params)


def linear1d_exact(problem, x2_terminal):
    """Closed-form Young solution of linear1d: y0 exp(a X^2_t)."""
    return problem.y0 * math.exp(problem.rate * float(x2_terminal))


def bm_linear_exact(problem, t):
    """Closed form of the drift-only problem: y0 exp(rate t)."""
    return problem.y0 * math.exp(problem.rate * float(t))

"""Runge-Kutta and step-N Euler steppers, tableaus, order conditions."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbmsde import errors, fbm, problems, schemes


def test_builtin_order_condition_values():
    rep = schemes.check_order_conditions(schemes.BUILTIN_TABLEAUS["midpoint"])
    assert rep.sum_b == 1.0 and rep.sum_bc == 0.5 and rep.satisfies_41
    rep = schemes.check_order_conditions(schemes.BUILTIN_TABLEAUS["rk4"])
    assert abs(rep.sum_b - 1.0) <= 1e-12 and rep.sum_bc == 0.5
    assert rep.satisfies_41
    rep = schemes.check_order_conditions(schemes.BUILTIN_TABLEAUS["heun"])
    assert rep.sum_b == 1.0 and rep.sum_bc == 0.5 and rep.satisfies_41
    rep = schemes.check_order_conditions(schemes.BUILTIN_TABLEAUS["euler"])
    assert rep.sum_b == 1.0 and rep.sum_bc == 0.0 and not rep.satisfies_41


@settings(max_examples=60, deadline=None)
@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=0, max_value=2**31),
)
def test_equivalent_form_residual_identity(s, seed):
    # sum_i b_i (sum_j b_j - 2 c_i) == (sum b)^2 - 2 sum b_i c_i for any tableau
    rng = np.random.default_rng(seed)
    tab = schemes.ButcherTableau(
        "random", rng.uniform(-1, 1, (s, s)), rng.uniform(-1, 1, s)
    )
    rep = schemes.check_order_conditions(tab)
    expected = rep.sum_b**2 - 2.0 * rep.sum_bc
    assert math.isclose(rep.equivalent_form_residual, expected,
                        rel_tol=1e-12, abs_tol=1e-12)
    # when sum b = 1 the residual collapses to 1 - 2 sum_bc
    if abs(rep.sum_b - 1.0) <= 1e-12:
        assert math.isclose(rep.equivalent_form_residual, 1 - 2 * rep.sum_bc,
                            abs_tol=1e-10)


def test_tableau_validation():
    with pytest.raises(errors.DomainError):
        schemes.ButcherTableau("bad", [[0.0, 0.0]], [1.0])
    with pytest.raises(errors.DomainError):
        schemes.ButcherTableau("bad", [[0.0]], [0.5, 0.5])
    assert schemes.BUILTIN_TABLEAUS["rk4"].explicit
    assert not schemes.BUILTIN_TABLEAUS["midpoint"].explicit
    assert np.allclose(schemes.BUILTIN_TABLEAUS["rk4"].c, [0, 0.5, 0.5, 1.0])


def test_load_tableau_with_fraction_strings(tmp_path):
    raw = {
        "name": "heun-file",
        "s": 2,
        "a": [["0", "0"], ["1", "0"]],
        "b": ["1/2", "1/2"],
    }
    f = tmp_path / "heun.json"
    f.write_text(json.dumps(raw))
    tab = schemes.load_tableau(str(f))
    assert tab.name == "heun-file"
    assert np.array_equal(tab.b, [0.5, 0.5])
    assert schemes.check_order_conditions(tab).satisfies_41
    raw["s"] = 3
    f.write_text(json.dumps(raw))
    with pytest.raises(errors.DomainError):
        schemes.load_tableau(str(f))


def test_resolve_scheme_descriptors():
    assert schemes.resolve_scheme("step2") == ("step2", "stepn", 2)
    assert schemes.resolve_scheme(("stepn", 3))[0] == "step3"
    name, kind, payload = schemes.resolve_scheme("midpoint")
    assert kind == "rk" and payload is schemes.BUILTIN_TABLEAUS["midpoint"]
    with pytest.raises(errors.CapabilityError):
        schemes.resolve_scheme(("stepn", 4))
    with pytest.raises(errors.DomainError):
        schemes.resolve_scheme("step1")
    with pytest.raises(errors.DomainError):
        schemes.resolve_scheme("mystery")


def test_zero_field_constant_trajectory():
    field = problems.VectorField(2, 2, lambda y: np.zeros(y.shape + (2,)))
    prob = problems.SdeProblem(field, np.array([1.0, -2.0]), 1.0)
    path = fbm.sample_path(fbm.UniformGrid(1.0, 32), 2, 0.7, 0)
    for scheme in ("euler", "midpoint", "rk4", "step2"):
        traj = schemes.integrate(prob, path, scheme)
        assert np.array_equal(traj.states, np.tile([1.0, -2.0], (33, 1)))


def test_constant_field_step_n():
    # all derivatives vanish: step-N returns y + C dX for any N
    c = np.array([[1.0, -2.0, 0.5]])

    def ev(y):
        return np.broadcast_to(c, y.shape[:-1] + (1, 3))

    field = problems.VectorField(1, 3, ev)
    y = np.array([0.3])
    dx = np.array([0.1, -0.2, 0.05])
    expected = y + c[0] @ dx
    for order in (2, 3):
        fld = field if order == 2 else problems.VectorField(
            1, 3, ev, hessian=lambda y: np.zeros(y.shape[:-1] + (3, 1, 1, 1))
        )
        out = schemes.step_n_euler_step(fld, y, dx, order=order)
        assert np.allclose(out, expected, atol=1e-14)


def test_step2_scalar_linear_hand_formula():
    # V(y) = a y, d = 1: step2 gives y (1 + a dX + a^2 dX^2 / 2)
    a = 0.8
    field = problems.builtin_problem("bm-linear", rate=a).field
    y, dx = np.array([2.0]), np.array([0.3])
    out = schemes.step_n_euler_step(field, y, dx)
    expected = 2.0 * (1 + a * 0.3 + (a * 0.3) ** 2 / 2)
    assert np.allclose(out, expected, atol=1e-14)


def test_step2_paper5_hand_formula():
    # independent hand-coded step for V = (3 sin, 3 cos, 3 sin) at y = 5
    prob = problems.builtin_problem("paper5")
    y = np.array([5.0])
    dx = np.array([0.01, 0.05, -0.03])
    s, c = 3 * math.sin(5), 3 * math.cos(5)
    v = np.array([s, c, s])
    dv = np.array([c, -s, c])
    u = v @ dx
    expected = 5.0 + u + 0.5 * (dv @ dx) * u
    out = schemes.step_n_euler_step(prob.field, y, dx)
    assert np.allclose(out, expected, atol=1e-14)


def test_step3_needs_hessian():
    field = problems.VectorField(1, 2, lambda y: np.stack(
        [np.zeros_like(y), y], axis=-1))
    with pytest.raises(errors.CapabilityError, match="hessian"):
        schemes.step_n_euler_step(field, np.array([1.0]), np.array([0.1, 0.1]),
                                  order=3)
    with pytest.raises(errors.CapabilityError):
        schemes.step_n_euler_step(
            problems.builtin_problem("paper5").field,
            np.array([1.0]), np.array([0.1, 0.1, 0.1]), order=4,
        )


def test_step3_consistency_with_taylor():
    # on the scalar linear field, step3 adds the a^3 dX^3 / 6 term
    a = 0.6
    field = problems.builtin_problem("bm-linear", rate=a).field
    y, dx = np.array([1.5]), np.array([0.2])
    out = schemes.step_n_euler_step(field, y, dx, order=3)
    z = a * 0.2
    assert np.allclose(out, 1.5 * (1 + z + z**2 / 2 + z**3 / 6), atol=1e-14)


def test_rk4_on_drift_ode_accuracy():
    prob = problems.builtin_problem("bm-linear")
    grid = fbm.UniformGrid(1.0, 100)
    path = fbm.sample_path(grid, 1, 0.75, 0, sampler="cholesky")
    traj = schemes.integrate(prob, path, "rk4")
    assert abs(float(traj.states[-1, 0]) - 5.0 * math.e) < 1e-8


def test_implicit_midpoint_stage_residual():
    # the converged stage satisfies Z = y + a11 V(Z) dX to ~fp_tol
    field = problems.builtin_problem("paper5").field
    cfg = schemes.SolverConfig()
    y = np.array([5.0])
    dx = np.array([1.0 / 64, 0.05, -0.08])
    tab = schemes.BUILTIN_TABLEAUS["midpoint"]
    y_next, diag = schemes.rk_step(tab, field, y, dx, cfg)
    assert not diag["explicit"] and diag["iterations"] >= 1
    # recover Z from the update y_next = y + b1 V(Z) dX with b1 = 1
    k = y_next - y
    z = y + 0.5 * k
    resid = z - y - 0.5 * problems.eval_field(field, z)[0] @ dx
    assert np.abs(resid).max() <= 10 * cfg.fp_tol


def test_implicit_divergence_guard():
    field = problems.builtin_problem("bm-linear", rate=1.0).field
    with pytest.raises(errors.DivergenceError):
        schemes.rk_step(
            schemes.BUILTIN_TABLEAUS["midpoint"], field,
            np.array([1.0]), np.array([1e9]),
        )


def test_integrate_attaches_step_index_on_failure():
    field = problems.builtin_problem("bm-linear", rate=1.0).field
    prob = problems.SdeProblem(field, np.array([1.0]), 1.0)
    grid = fbm.UniformGrid(1.0, 4)
    values = np.zeros((5, 1))
    values[:, 0] = grid.nodes()
    values[3:, 0] += 1e9  # blow up the third increment
    values.setflags(write=False)
    path = fbm.DrivingPath(
        grid, 0.75, values, fbm.SeedRecord((0,), "manual", 0.75, 1)
    )
    with pytest.raises(
        (errors.DivergenceError, errors.NonconvergenceError)
    ) as exc_info:
        schemes.integrate(prob, path, "midpoint")
    assert exc_info.value.step == 2


def test_integrate_batch_freezes_failed_paths():
    field = problems.builtin_problem("bm-linear", rate=1.0).field
    incs = np.full((2, 4, 1), 0.1)
    incs[1, 2, 0] = 1e9
    states, failed, _ = schemes.integrate_batch(
        field, np.array([1.0]), incs, "midpoint"
    )
    assert failed.tolist() == [False, True]
    assert np.isfinite(states).all()
    # the failed path keeps its last good state
    assert np.array_equal(states[1, 2], states[1, 4])
    # the healthy path is unaffected by its neighbor's failure
    solo, solo_failed, _ = schemes.integrate_batch(
        field, np.array([1.0]), incs[:1], "midpoint"
    )
    assert not solo_failed[0]
    assert np.array_equal(states[0], solo[0])


def test_dimension_mismatch_rejected():
    prob = problems.builtin_problem("paper5")
    path = fbm.sample_path(fbm.UniformGrid(1.0, 8), 2, 0.7, 0)
    with pytest.raises(errors.ProtocolError):
        schemes.integrate(prob, path, "euler")


def test_horizon_mismatch_rejected():
    prob = problems.builtin_problem("paper5")
    path = fbm.sample_path(fbm.UniformGrid(2.0, 8), 3, 0.7, 0)
    with pytest.raises(errors.ProtocolError):
        schemes.integrate(prob, path, "euler")


def test_interpolate_linear_nodes_and_midpoints():
    grid = fbm.UniformGrid(1.0, 4)
    states = np.array([[0.0], [1.0], [4.0], [9.0], [16.0]])
    traj = schemes.Trajectory(grid, states, "manual")
    nodes = grid.nodes()
    assert np.array_equal(
        schemes.interpolate_linear(traj, nodes), states
    )
    assert np.allclose(schemes.interpolate_linear(traj, 0.125), [0.5])
    with pytest.raises(errors.DomainError):
        schemes.interpolate_linear(traj, 1.5)
    with pytest.raises(errors.DomainError):
        schemes.interpolate_linear(traj, -0.1)


@settings(max_examples=30, deadline=None)
@given(
    slope=st.floats(-2.0, 2.0),
    intercept=st.floats(-2.0, 2.0),
    t=st.floats(0.0, 1.0),
)
def test_interpolation_exact_on_affine_trajectories(slope, intercept, t):
    grid = fbm.UniformGrid(1.0, 8)
    states = (intercept + slope * grid.nodes())[:, None]
    traj = schemes.Trajectory(grid, states, "affine")
    out = schemes.interpolate_linear(traj, t)
    assert np.allclose(out, intercept + slope * t, atol=1e-12)

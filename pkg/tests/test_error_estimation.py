import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_mor.error_estimation import (
    DualReducedBasis,
    DualSolution,
    corrected_outputs,
    dual_from_primal_basis,
    dual_solve_nonparametric,
    indicator_coefficient,
    output_indicator,
    primal_residuals,
    rho_bar,
    true_mean_output_error,
    update_v_du,
)
from adaptive_mor.errors import DegenerateRhoError, InvalidInputError
from adaptive_mor.fom_models import TrainingSet, simulate_fom
from adaptive_mor.interpolation import deim_build, InterpErrorIndicator
from adaptive_mor.linalg_core import smallest_singular_value
from adaptive_mor.reduction import ReducedModel, pod, simulate_rom

import oracles
from models import make_toy

MU = np.array([1.3])


@pytest.fixture(scope="module")
def setup():
    fom = make_toy(N=8)
    traj = simulate_fom(fom, MU)
    V = pod(traj.states, count=3).V
    F = np.column_stack([simulate_fom(fom, [m]).nonlinear_snapshots for m in (0.5, 2.0)])
    fine = deim_build(F, count=6)
    coarse = fine.truncate(4)
    rom = ReducedModel(fom, V, coarse)
    rt = simulate_rom(rom, MU)
    steps = traj.snapshot_steps
    res = primal_residuals(fom, MU, rt.lifted(steps), rt.lifted(steps - 1), interp=coarse,
                           steps=steps)
    return dict(fom=fom, traj=traj, V=V, fine=fine, coarse=coarse, rom=rom, rt=rt, steps=steps,
                res=res)


def test_rom_states_match_oracle(setup):
    s = setup
    Xr = oracles.rom_states(s["fom"], MU, s["V"], s["coarse"].U, s["coarse"].indices)
    np.testing.assert_allclose(s["rt"].reduced_states, Xr, rtol=0, atol=1e-12)


def test_primal_residuals_match_oracle(setup):
    s = setup
    r_full, r_int, split, _ = oracles.residual_blocks(
        s["fom"], MU, s["V"], s["coarse"].U, s["coarse"].indices, s["steps"])
    np.testing.assert_allclose(s["res"].r_full, r_full, rtol=0, atol=1e-12)
    np.testing.assert_allclose(s["res"].r_interp, r_int, rtol=0, atol=1e-12)
    # r_pr = r_pr,I + dt (f - I f)
    np.testing.assert_allclose(s["res"].r_full, s["res"].r_interp + split, rtol=0, atol=1e-14)


def test_rho_matches_oracle(setup):
    s = setup
    xs = s["rt"].lifted(s["steps"])
    got = rho_bar(s["fom"], MU, s["traj"].states, xs, s["res"].full_norms)
    want = oracles.rho_oracle(s["fom"], MU, s["traj"].states, xs, s["res"].r_full)
    assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_coefficients_and_indicator_split(setup):
    s = setup
    fom = s["fom"]
    dual = dual_from_primal_basis(fom, s["V"], MU)
    rho = 1.7
    phi, psi = oracles.coefficients_oracle(fom, MU, rho, dual.x_du)
    sig = smallest_singular_value(fom.E(MU))
    assert abs(indicator_coefficient("original", rho, 1 / sig, dual.r_du_norm,
                                     dual.x_du_norm) - phi) <= 1e-12 * phi
    assert abs(indicator_coefficient("modified", rho, 1 / sig, dual.r_du_norm,
                                     dual.x_du_norm) - psi) <= 1e-12 * psi
    ind = InterpErrorIndicator(s["coarse"], s["fine"])
    di = fom.dt * ind.norm(s["res"].f_prev[s["fine"].indices])
    rep = output_indicator("modified", rho, sig, dual, s["res"].interp_norms, di)
    Pf = oracles.interp_operator(s["fine"].U, s["fine"].indices)
    Pc = oracles.interp_operator(s["coarse"].U, s["coarse"].indices)
    di_oracle = [fom.dt * np.linalg.norm((Pf - Pc) @ s["res"].f_prev[:, k])
                 for k in range(s["steps"].size)]
    rb_oracle = [psi * np.linalg.norm(s["res"].r_interp[:, k]) for k in range(s["steps"].size)]
    assert abs(rep.delta_rb - np.mean(rb_oracle)) <= 1e-12 * rep.delta_rb
    assert abs(rep.delta_i - psi * np.mean(di_oracle)) <= 1e-12 * max(rep.delta_i, 1e-300)
    assert rep.delta == pytest.approx(rep.delta_rb + rep.delta_i, rel=1e-15)


def test_corrected_output_and_mean_error(setup):
    s = setup
    fom = s["fom"]
    dual = dual_from_primal_basis(fom, s["V"], MU)
    y_r = s["rt"].snapshot_outputs
    got = corrected_outputs(y_r, dual, s["res"].r_full)
    want = np.column_stack([y_r[:, k] - np.array([dual.x_du[:, i] @ s["res"].r_full[:, k]
                                                  for i in range(2)])
                            for k in range(y_r.shape[1])])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    y = s["traj"].snapshot_outputs
    assert abs(true_mean_output_error(y, got) - oracles.mean_output_error(y, want)) <= 1e-12


def test_dual_residual_matches_oracle(setup):
    fom = setup["fom"]
    dual = dual_from_primal_basis(fom, setup["V"], MU)
    E = oracles.dense(fom.E(MU))
    for i in range(2):
        want = np.linalg.norm(-fom.C[i] - E.T @ dual.x_du[:, i])
        assert abs(dual.r_du_norm[i] - want) <= 1e-12


def test_krylov_dual_solves_nonparametric_system():
    fom = make_toy(parametric=False)
    sol = dual_solve_nonparametric(fom, tol=1e-12)
    E = oracles.dense(fom.E(np.zeros(0)))
    for i in range(2):
        ref = oracles.lu_solve_dense(E.T, -fom.C[i])
        np.testing.assert_allclose(sol.x_du[:, i], ref, atol=1e-10)
    assert sol.converged and np.all(sol.r_du_norm < 1e-10)


def test_krylov_dual_rejects_parametric_e():
    with pytest.raises(InvalidInputError):
        dual_solve_nonparametric(make_toy(parametric=True))


def test_dual_reduced_basis_becomes_exact_at_its_samples():
    fom = make_toy(N=8)
    tr = TrainingSet.grid(fom.domain, (5,))
    dual = DualReducedBasis(fom, tr.points[0])
    assert dual.indicator(tr.points[0]) > 0
    for _ in range(6):
        if not update_v_du(dual, tr.points, 1e-12):
            break
    for mu, _ in dual.history:
        assert dual.indicator(mu) < 1e-10
    assert np.allclose(dual.V_du.T @ dual.V_du, np.eye(dual.V_du.shape[1]), atol=1e-12)


def test_exact_rom_gives_zero_indicator():
    fom = make_toy(N=8)
    traj = simulate_fom(fom, MU)
    V = np.eye(8)
    rom = ReducedModel(fom, V, None)
    rt = simulate_rom(rom, MU)
    steps = traj.snapshot_steps
    res = primal_residuals(fom, MU, rt.lifted(steps), rt.lifted(steps - 1), steps=steps)
    assert res.full_norms.max() < 1e-12
    with pytest.raises(DegenerateRhoError):
        rho_bar(fom, MU, traj.states, rt.lifted(steps), res.full_norms)


def test_unknown_mode_rejected():
    with pytest.raises(InvalidInputError):
        indicator_coefficient("other", 1.0, 1.0, 1.0, 1.0)


def test_nonpositive_infsup_rejected():
    dual = DualSolution("x", np.zeros((3, 1)), np.zeros(1))
    with pytest.raises(InvalidInputError):
        output_indicator("original", 1.0, 0.0, dual, np.ones(2), np.zeros(2))


@settings(max_examples=60, deadline=None)
@given(rho=st.floats(0.0, 50.0), inv=st.floats(0.0, 1e3), r=st.floats(0.0, 10.0),
       x=st.floats(0.0, 10.0))
def test_modified_never_exceeds_original_for_rho_at_least_half(rho, inv, r, x):
    # |1 - rho| <= rho  iff  rho >= 1/2
    o = indicator_coefficient("original", rho, inv, r, x)
    m = indicator_coefficient("modified", rho, inv, r, x)
    if rho >= 0.5:
        assert m <= o * (1 + 1e-12) + 1e-300
    assert m >= 0 and o >= 0


@settings(max_examples=40, deadline=None)
@given(rho=st.floats(0.01, 10.0))
def test_indicator_linear_in_coefficient(rho):
    dual = DualSolution("x", np.ones((4, 1)), np.array([0.5]))
    rep = output_indicator("original", rho, 2.0, dual, np.array([1.0, 3.0]), np.array([0.1, 0.3]))
    assert rep.delta_rb == pytest.approx(rep.coefficient * 2.0)
    assert rep.delta_i == pytest.approx(rep.coefficient * 0.2)

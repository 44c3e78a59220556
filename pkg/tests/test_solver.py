"""MINRES, block preconditioner, direct oracle and stability estimators."""
import json

import numpy as np
import pytest
import scipy.sparse as sp

from curvedstokes.assembly import (assemble_a_dg, assemble_div, assemble_energy_gram,
                                   assemble_pressure_mass, assemble_stokes)
from curvedstokes.geometry import CurvedMesh
from curvedstokes.harness import RunConfig, divergence_l2, example_ball, stability_constants
from curvedstokes.solver import (BlockPreconditioner, PreconditionerBreakdown, PreconditionerConfig,
                                 SaddleOperator, SolveReport, direct_solve, estimate_coercivity,
                                 estimate_inf_sup, minres, minres_solve, probe_spd, spd_factor)
from curvedstokes.spaces import DofMap


@pytest.fixture(scope="module")
def ball_system(ball0):
    sol = example_ball()
    cm, dm = CurvedMesh(ball0, degree=2), DofMap(ball0, 2)
    return assemble_stokes(cm, dm, sol.f, lambda x: sol.u(cm.geometry.project(x)))


def test_saddle_operator_is_symmetric(ball_system, rng):
    A, B, _, _ = ball_system.reduced()
    K = SaddleOperator(A, B)
    x, y = rng.standard_normal((2, K.shape[0]))
    assert abs(x @ K.matvec(y) - y @ K.matvec(x)) <= 1e-10 * abs(x @ K.matvec(y))
    Kd = K.tocsr()
    assert abs(Kd - Kd.T).max() <= 1e-12 * abs(Kd).max()
    np.testing.assert_allclose(Kd @ x, K.matvec(x), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("vb,pb", [("exact", "mass-matrix-inner-cg"), ("jacobi", "mass-matrix-diagonal"),
                                   ("inner-cg", "mass-matrix-inner-cg")])
def test_preconditioner_is_positive(ball_system, vb, pb):
    A, _, _, _ = ball_system.reduced()
    P = BlockPreconditioner(A, ball_system.pressure_mass, PreconditionerConfig(vb, pb))
    assert probe_spd(P, n_samples=20) > 0


def test_unknown_preconditioner_blocks():
    with pytest.raises(ValueError):
        PreconditionerConfig(velocity_block="ilu")
    with pytest.raises(ValueError):
        PreconditionerConfig(pressure_block="identity")


def test_spd_factor_solves(ball_system, rng):
    A, _, _, _ = ball_system.reduced()
    solve = spd_factor(A)
    b = rng.standard_normal(A.shape[0])
    x = solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_minres_zero_rhs():
    K = sp.diags([2.0, -1.0, 3.0])
    x, hist, ok = minres(K, np.zeros(3))
    assert ok and len(hist) == 1 and not x.any()


def test_minres_on_symmetric_indefinite_matrix(rng):
    n = 60
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    K = Q @ np.diag(np.linspace(-3, 5, n) + 0.05) @ Q.T
    b = rng.standard_normal(n)
    x, hist, ok = minres(K, b, tol=1e-12, max_iters=500)
    assert ok
    assert np.linalg.norm(K @ x - b) <= 1e-9 * np.linalg.norm(b)
    assert np.all(np.diff(hist) <= 1e-12)


def test_minres_matches_direct(ball_system):
    sol_i, rep = minres_solve(ball_system, tol=1e-12)
    sol_d, _ = direct_solve(ball_system)
    assert rep.converged
    du = np.linalg.norm(sol_i.velocity - sol_d.velocity) / np.linalg.norm(sol_d.velocity)
    dp = np.linalg.norm(sol_i.pressure - sol_d.pressure) / np.linalg.norm(sol_d.pressure)
    assert du <= 1e-8 and dp <= 1e-8
    assert np.all(np.diff(rep.residual_history) <= 1e-12)
    assert rep.residual_history[0] == 1.0 and rep.residual_history[-1] <= 1e-12


def test_homogeneous_single_tet_gives_zero(tet1):
    cm, dm = CurvedMesh(tet1, degree=1), DofMap(tet1, 2)
    system = assemble_stokes(cm, dm, lambda x: np.zeros_like(x))
    sol, _ = direct_solve(system)
    assert np.abs(sol.velocity).max() <= 1e-14 and np.abs(sol.pressure).max() <= 1e-14
    sol2, rep = minres_solve(system)
    assert rep.iterations == 0 and not sol2.velocity.any()


def test_report_json_and_iteration_cap(ball_system, tmp_path):
    _, rep = minres_solve(ball_system, tol=1e-12, max_iters=3)
    assert not rep.converged and rep.iterations == 3
    data = json.loads(rep.to_json(tmp_path / "r.json"))
    assert data["iterations"] == 3 and data["converged"] is False
    assert json.loads((tmp_path / "r.json").read_text()) == data
    with pytest.raises(ValueError):
        minres_solve(ball_system, tol=0.0)
    assert isinstance(SolveReport(1, 0.1, 0.0).to_json(), str)


def test_indefinite_preconditioner_breaks_down(rng):
    K = np.diag([1.0, 2.0, 3.0])
    with pytest.raises(PreconditionerBreakdown):
        minres(K, rng.standard_normal(3), M=lambda v: -v)


def test_solution_is_divergence_free(ball1):
    sol = example_ball()
    cm, dm = CurvedMesh(ball1, degree=2), DofMap(ball1, 2)
    system = assemble_stokes(cm, dm, sol.f, lambda x: sol.u(cm.geometry.project(x)))
    fields, rep = minres_solve(system)
    assert rep.converged
    div, peak = divergence_l2(fields, cm, dm)
    assert div <= 1e-9 and peak <= 1e-8


def test_inf_sup_estimators_agree(ball0):
    cm, dm = CurvedMesh(ball0, degree=2), DofMap(ball0, 2)
    free = dm.free_velocity_dofs
    E = assemble_energy_gram(cm, dm)[free][:, free]
    B = assemble_div(cm, dm)[:, free]
    Mp = assemble_pressure_mass(cm, dm)
    c = dm.constant_pressure_vector()
    dense = estimate_inf_sup(B, E, Mp, constant=c)
    lanczos = estimate_inf_sup(B, E, Mp, constant=c, dense_limit=0)
    assert dense > 0
    assert lanczos == pytest.approx(dense, rel=1e-6)


def test_coercivity_estimators_agree(ball0):
    cm, dm = CurvedMesh(ball0, degree=2), DofMap(ball0, 2)
    A = assemble_a_dg(cm, dm)
    E = assemble_energy_gram(cm, dm)
    dense = estimate_coercivity(A, E)
    iterative = estimate_coercivity(A, E, dense_limit=0)
    assert dense > 0
    assert iterative == pytest.approx(dense, rel=1e-6)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_coercivity_grows_with_penalty(ball0, k):
    cfg = RunConfig(degree=k)
    alphas = [0.001, 5.0, 20.0, 80.0]
    coer = stability_constants(ball0, cfg, alphas, inf_sup=False)["coercivity"]
    vals = [coer[a] for a in alphas]
    assert np.all(np.diff(vals) > 0)
    # without enough penalty the form is indefinite; alpha = 20 is coercive
    assert vals[0] < 0 < coer[20.0]

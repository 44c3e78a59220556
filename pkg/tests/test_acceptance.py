"""Acceptance criteria 1-9; each test prints one PASS/FAIL line (see the terminal summary).

Levels 0, 1, 2 of the generated ball are the three coarsest meshes of the
sequence (1008, 7488 and 57600 velocity DOFs for k = 2).
"""
import numpy as np
import pytest

from conftest import record_criterion
from curvedstokes.assembly import (FaceQuadratureCache, LiftingWorkspace, a_dg_via_lifting,
                                   assemble_a_dg, assemble_stokes, side_traces)
from curvedstokes.geometry import REF_FACE_AREAS, CurvedMesh, surface_measure_factor
from curvedstokes.harness import (RunConfig, effective_h, energy_norm_error, example_ball,
                                  observed_rates, pressure_l2_error, run_cavity,
                                  run_convergence_study, run_patch, stability_constants)
from curvedstokes.mesh import generate_ball_mesh, uniform_refine
from curvedstokes.solver import direct_solve, minres_solve
from curvedstokes.spaces import (DofMap, FieldCoefficients, bdm_interpolate,
                                 eval_divergence_physical, eval_velocity_gradient_physical,
                                 eval_velocity_physical, local_coefficients, pressure_project)

pytestmark = pytest.mark.slow

REFERENCE_U = [1.18e-1, 3.56e-2, 8.99e-3]
REFERENCE_P = [1.11e-1, 4.42e-2, 1.28e-2]


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    out = tmp_path_factory.mktemp("convergence")
    cfg = RunConfig(geometry="both", levels=3, out=str(out), timings=False)
    records = run_convergence_study(cfg)
    return records, out


@pytest.fixture(scope="module")
def ball_meshes():
    meshes = [generate_ball_mesh(level=0)]
    for _ in range(2):
        meshes.append(uniform_refine(meshes[-1]))
    return meshes


def _fmt(vals):
    return "[" + ", ".join(f"{v:.3g}" for v in vals) + "]"


def test_criterion_1_curved_convergence(study):
    records, out = study
    rec = records["curved"]
    eu = [r.energy_error_u for r in rec.reports]
    ep = [r.l2_error_p for r in rec.reports]
    dofs = [r.dofs_u for r in rec.reports]
    ok = (len(rec.reports) == 3
          and rec.rates_u[-1] >= 1.8 and rec.rates_p[-1] >= 1.8
          and all(0.5 <= e / t <= 2.0 for e, t in zip(eu, REFERENCE_U))
          and all(0.5 <= e / t <= 2.0 for e, t in zip(ep, REFERENCE_P))
          and max(dofs) <= 60_000)
    record_criterion(1, ok, f"e_u={_fmt(eu)} e_p={_fmt(ep)} rates_u={_fmt(rec.rates_u)} "
                            f"rates_p={_fmt(rec.rates_p)} dofs_u={dofs}")
    assert (out / "convergence_curved_k2.csv").exists() and (out / "convergence_k2.png").exists()
    assert ok


def test_criterion_2_straight_suboptimal(study):
    records, _ = study
    cur, st = records["curved"], records["straight"]
    rates = [st.rates_u[-1], st.rates_p[-1]]
    below = all(c.energy_error_u < s.energy_error_u and c.l2_error_p < s.l2_error_p
                for c, s in zip(cur.reports[1:], st.reports[1:]))
    ok = len(st.reports) == 3 and all(1.2 <= r <= 1.8 for r in rates) and below
    record_criterion(2, ok, f"straight rates u={rates[0]:.3f} p={rates[1]:.3f}; "
                            f"curved below straight from level 1: {below}")
    assert ok


def test_criterion_3_divergence_free(study):
    records, _ = study
    reps = [r for rec in records.values() for r in rec.reports]
    cav, _, _ = run_cavity(RunConfig(experiment="cavity", cavity_target_tets=1152), write=False)
    reps.append(cav)
    worst = max(r.div_norm for r in reps)
    peak = max(r.div_max for r in reps)
    ok = worst <= 1e-9 and peak <= 1e-8
    record_criterion(3, ok, f"max ||div u_h|| = {worst:.2e}, max |div u_h| = {peak:.2e} "
                            f"over {len(reps)} solves")
    assert ok


def test_criterion_4_patch():
    errs = []
    for k in (1, 2, 3):
        rep, _, _ = run_patch(RunConfig(experiment="patch", degree=k, out=""))
        errs.append(max(rep.energy_error_u, rep.l2_error_p))
    ok = max(errs) <= 1e-9
    record_criterion(4, ok, f"max patch error for k=1,2,3: {_fmt(errs)}")
    assert ok


def test_criterion_5_transform_properties(ball_meshes):
    rng = np.random.default_rng(5)
    mesh = ball_meshes[0]
    cm, dm = CurvedMesh(mesh, degree=2), DofMap(mesh, 2)
    coeffs = FieldCoefficients(rng.standard_normal(dm.n_velocity), np.zeros(dm.n_pressure))
    grad_err = trace_err = 0.0
    h = 1e-6
    for _ in range(200):
        e = int(rng.integers(mesh.n_elements))
        x = rng.dirichlet(np.ones(4))[1:] * 0.9 + 0.025
        Jinv = cm.evaluate(np.array([e]), x[None], second=False)["Jinv"][0, 0]
        d = np.column_stack([(eval_velocity_physical(coeffs, e, cm, dm, x + h * a)
                              - eval_velocity_physical(coeffs, e, cm, dm, x - h * a)) / (2 * h)
                             for a in np.eye(3)])
        g = eval_velocity_gradient_physical(coeffs, e, cm, dm, x)
        scale = max(1.0, np.abs(g).max())
        grad_err = max(grad_err, np.abs(d @ Jinv - g).max() / scale)
        trace_err = max(trace_err, abs(eval_divergence_physical(coeffs, e, cm, dm, x) - np.trace(g)) / scale)

    fq = FaceQuadratureCache(cm, mesh.interior_faces, 6, second=False)
    u = [np.einsum("fb,fqbi->fqi", local_coefficients(dm, coeffs.velocity, s.elems),
                   side_traces(cm, dm, s, fq.rule, gradients=False)[0]) for s in fq.sides]
    jump = np.abs(np.einsum("fqi,fqi->fq", u[0] - u[1], fq.normals)).max() / np.abs(u[0]).max()

    fine = ball_meshes[2]
    cf = CurvedMesh(fine, degree=2)
    bf = fine.boundary_faces
    area_cache = FaceQuadratureCache(cf, bf, 8, second=False)
    area = area_cache.ds.sum()
    # the cached measure is J_d |J^{-T} n| at every point; spot-check it pointwise
    rule = area_cache.rule
    for i in rng.choice(len(bf), 20, replace=False):
        e, lf = fine.face_elements[bf[i], 0], fine.face_local[bf[i], 0]
        side = area_cache.sides[0]
        st = side.ref_points[i]
        fac = [surface_measure_factor(cf.element_map(int(e)), int(lf), _face_coords(lf, p)) for p in st]
        np.testing.assert_allclose(side.ds[i], rule.weights * 2 * REF_FACE_AREAS[lf] * np.array(fac),
                                   rtol=1e-12)
    area_err = abs(area - 4 * np.pi) / (4 * np.pi)
    ok = grad_err <= 1e-5 and trace_err <= 1e-9 and jump <= 1e-11 and area_err <= 1e-4
    record_criterion(5, ok, f"grad FD {grad_err:.1e}, trace {trace_err:.1e}, "
                            f"normal jump {jump:.1e}, sphere area rel. error {area_err:.1e}")
    assert ok


def _face_coords(lf, ref_point):
    """Face parameters (s, t) of a reference point on local face lf."""
    from curvedstokes._poly import FACE_VERTICES, REF_VERTICES
    a, b, c = REF_VERTICES[list(FACE_VERTICES[int(lf)])]
    M = np.column_stack([b - a, c - a])
    st, *_ = np.linalg.lstsq(M, ref_point - a, rcond=None)
    return st


def test_criterion_6_interpolation_rates(ball_meshes):
    sol = example_ball()
    eu, ep, hs = [], [], []
    for mesh in ball_meshes:
        cm, dm = CurvedMesh(mesh, degree=2), DofMap(mesh, 2)
        uh = bdm_interpolate(sol.u, cm, dm)
        eu.append(energy_norm_error(sol.u, sol.grad_u, uh, cm, dm))
        ep.append(pressure_l2_error(sol.p, pressure_project(sol.p, cm, dm), cm, dm))
        hs.append(effective_h(cm))
    ru, rp = observed_rates(eu, hs), observed_rates(ep, hs)
    ok = ru[-1] >= 1.8 and rp[-1] >= 1.8
    record_criterion(6, ok, f"interpolation e_u={_fmt(eu)} rates {_fmt(ru)}; "
                            f"projection e_p={_fmt(ep)} rates {_fmt(rp)}")
    assert ok


def test_criterion_7_stability(ball_meshes):
    cfg = RunConfig()
    first = stability_constants(ball_meshes[0], cfg, alphas=[5.0, 20.0, 80.0])
    inf_sup = [first["inf_sup"]]
    for mesh in ball_meshes[1:]:
        inf_sup.append(stability_constants(mesh, cfg, alphas=[])["inf_sup"])
    coer = first["coercivity"]
    cvals = [coer[5.0], coer[20.0], coer[80.0]]
    degradation = 1.0 - min(inf_sup) / inf_sup[0]
    ok = (min(inf_sup) > 0 and degradation <= 0.2 and coer[20.0] > 0
          and all(b >= a for a, b in zip(cvals, cvals[1:])))
    record_criterion(7, ok, f"inf-sup {_fmt(inf_sup)} (degradation {degradation:.1%}); "
                            f"coercivity at alpha 5/20/80 {_fmt(cvals)}")
    assert ok


def test_criterion_8_solver_oracle(ball_meshes):
    sol = example_ball()
    worst = 0.0
    sizes = []
    for k in (1, 2, 3):
        mesh = ball_meshes[0]
        cm, dm = CurvedMesh(mesh, degree=k), DofMap(mesh, k)
        system = assemble_stokes(cm, dm, sol.f, lambda x, cm=cm: sol.u(cm.geometry.project(x)))
        it, rep = minres_solve(system, tol=1e-12)
        dr, _ = direct_solve(system)
        assert rep.converged
        worst = max(worst, np.abs(it.velocity - dr.velocity).max(), np.abs(it.pressure - dr.pressure).max())
        sizes.append(dm.n_velocity + dm.n_pressure)
    rng = np.random.default_rng(8)
    cm, dm = CurvedMesh(ball_meshes[0], degree=2), DofMap(ball_meshes[0], 2)
    A = assemble_a_dg(cm, dm)
    ws = LiftingWorkspace(cm, dm)
    lift_err = 0.0
    for _ in range(20):
        u, v = rng.standard_normal((2, dm.n_velocity))
        ref = u @ A @ v
        lift_err = max(lift_err, abs(a_dg_via_lifting(u, v, ws) - ref) / abs(ref))
    ok = worst <= 1e-8 and lift_err <= 1e-9 and max(sizes) <= 20_000
    record_criterion(8, ok, f"MINRES vs direct max diff {worst:.1e} (systems {sizes}); "
                            f"lifting vs matrix a_DG {lift_err:.1e} on 20 pairs")
    assert ok


def test_criterion_9_cavity_flux():
    cfg = RunConfig(experiment="cavity", cavity_target_tets=3880)
    rep, _, _ = run_cavity(cfg, write=False)
    flux = rep.extra["plane_flux"]
    ok = abs(flux) <= 1e-8 and rep.div_norm <= 1e-9 and rep.div_max <= 1e-8
    record_criterion(9, ok, f"{rep.extra['n_tets']} tets: z=0.5 flux {flux:.1e} over area "
                            f"{rep.extra['plane_area']:.4f}, ||div u_h|| {rep.div_norm:.1e}")
    assert ok

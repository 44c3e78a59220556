"""Reference BDM/pressure bases, DOF numbering, Piola map, interpolation, constraints."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvedstokes.assembly import FaceQuadratureCache, side_traces
from curvedstokes.geometry import CurvedMesh, face_to_ref
from curvedstokes.harness import lid_velocity, pressure_l2_error
from curvedstokes.mesh import StraightMesh, generate_cavity_mesh
from curvedstokes.quadrature import tet_quadrature, tri_quadrature
from curvedstokes.spaces import (DofMap, FieldCoefficients, bdm_basis, bdm_interpolate,
                                 boundary_normal_moments, eval_divergence_physical,
                                 eval_velocity_gradient_physical, eval_velocity_physical,
                                 impose_zero_normal_trace, local_coefficients, piola_values,
                                 pressure_basis, pressure_mean, pressure_project)


def _random_ref(rng, n=1):
    b = rng.dirichlet(np.ones(4), size=n)[:, 1:]
    return b[0] if n == 1 else b


@pytest.mark.parametrize("k", [1, 2, 3])
def test_basis_is_dual_to_functionals(k):
    basis = bdm_basis(k)
    fr = tri_quadrature(2 * k + 2)
    tr = tet_quadrature(2 * k + 2)
    face_vals = np.stack([basis.values(face_to_ref(f, fr.points)) for f in range(4)])  # (4,Q,nb,3)
    face_vals = np.moveaxis(face_vals, 2, 0)  # (nb, 4, Q, 3)
    int_vals = np.moveaxis(basis.values(tr.points), 1, 0)
    F = basis.apply_functionals(face_vals, int_vals, fr, tr)
    np.testing.assert_allclose(F, np.eye(basis.shape_count), atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_pressure_basis_is_orthonormal(k):
    pb = pressure_basis(k)
    tr = tet_quadrature(2 * k)
    psi = pb.values(tr.points)
    np.testing.assert_allclose(np.einsum("q,qa,qb->ab", tr.weights, psi, psi),
                               np.eye(pb.shape_count), atol=1e-12)
    assert np.allclose(psi[:, 0], pb.constant_value)


@pytest.mark.parametrize("k,nu,np_", [(1, 12, 1), (2, 30, 4), (3, 60, 10)])
def test_single_tet_dof_counts(tet1, k, nu, np_):
    dm = DofMap(tet1, k)
    assert (dm.n_velocity, dm.n_pressure) == (nu, np_)
    assert len(dm.boundary_normal_dofs) == 4 * (k + 1) * (k + 2) // 2
    assert len(dm.free_velocity_dofs) == nu - len(dm.boundary_normal_dofs)


def test_invalid_degree():
    with pytest.raises(ValueError):
        bdm_basis(4)


def test_dofs_are_shared_exactly_once(ball0):
    dm = DofMap(ball0, 2)
    counts = np.bincount(dm.l2g.ravel(), minlength=dm.n_velocity)
    nf = dm.n_face_dofs
    face_counts = counts[:ball0.n_faces * nf].reshape(-1, nf)
    expect = np.where(ball0.is_boundary_face, 1, 2)
    assert np.all(face_counts == expect[:, None])
    assert np.all(counts[ball0.n_faces * nf:] == 1)
    # the non-owner side carries a minus sign on every shared face
    assert np.all((dm.sign == -1).sum() == len(ball0.interior_faces) * nf)


def test_piola_identity_and_scaling(tet1, rng):
    x = _random_ref(rng, 5)
    vhat = bdm_basis(2).values(x)
    geo = CurvedMesh(tet1, degree=1).evaluate(np.array([0]), x, second=False)
    np.testing.assert_allclose(piola_values(geo, vhat)[0], vhat, atol=1e-14)
    big = StraightMesh(2 * tet1.vertices, tet1.tets)
    geo2 = CurvedMesh(big, degree=1).evaluate(np.array([0]), x, second=False)
    np.testing.assert_allclose(piola_values(geo2, vhat)[0], vhat / 4, atol=1e-14)


@pytest.mark.parametrize("curved", [True, False])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_normal_component_is_continuous(ball0, rng, curved, k):
    from curvedstokes.geometry import ExactGeometry
    cm = CurvedMesh(ball0, degree=k) if curved else CurvedMesh(ball0, ExactGeometry("identity"), k)
    dm = DofMap(ball0, k)
    v = rng.standard_normal(dm.n_velocity)
    fq = FaceQuadratureCache(cm, ball0.interior_faces, 2 * k + 2, second=False)
    s0, s1 = fq.sides
    np.testing.assert_allclose(s0.geo["x"], s1.geo["x"], atol=1e-13)
    u0 = np.einsum("fb,fqbi->fqi", local_coefficients(dm, v, s0.elems),
                   side_traces(cm, dm, s0, fq.rule, gradients=False)[0])
    u1 = np.einsum("fb,fqbi->fqi", local_coefficients(dm, v, s1.elems),
                   side_traces(cm, dm, s1, fq.rule, gradients=False)[0])
    jump = np.einsum("fqi,fqi->fq", u0 - u1, s0.normals)
    assert np.abs(jump).max() <= 1e-11 * np.abs(u0).max()
    np.testing.assert_allclose(s0.normals, -s1.normals, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_physical_gradient_matches_reference_differences(ball0, rng, k):
    """grad u_h at M_h(xh) equals d(u_h o M_h)/dxh times J^{-1}."""
    cm = CurvedMesh(ball0, degree=k)
    dm = DofMap(ball0, k)
    coeffs = FieldCoefficients(rng.standard_normal(dm.n_velocity), np.zeros(dm.n_pressure))
    curved = np.flatnonzero(~cm.is_affine)
    elems = np.concatenate([curved, np.flatnonzero(cm.is_affine)]) if k > 1 else np.arange(48)
    h = 1e-6
    for i in range(200 if k == 2 else 40):
        e = int(elems[i % len(elems)])
        x = _random_ref(rng) * 0.9 + 0.025
        geo = cm.evaluate(np.array([e]), x[None], second=False)
        d = np.column_stack([(eval_velocity_physical(coeffs, e, cm, dm, x + h * a)
                              - eval_velocity_physical(coeffs, e, cm, dm, x - h * a)) / (2 * h)
                             for a in np.eye(3)])
        fd = d @ geo["Jinv"][0, 0]
        g = eval_velocity_gradient_physical(coeffs, e, cm, dm, x)
        assert np.abs(fd - g).max() <= 1e-5 * max(1.0, np.abs(g).max())
        div = eval_divergence_physical(coeffs, e, cm, dm, x)
        assert abs(div - np.trace(g)) <= 1e-9 * max(1.0, np.abs(g).max())


def test_interpolating_position_field(ball1, rng):
    cm, dm = CurvedMesh(ball1, degree=2), DofMap(ball1, 2)
    assert cm.is_affine.any() and not cm.is_affine.all()
    v = bdm_interpolate(lambda x: x, cm, dm)
    # exact on affine cells; on curved cells the reference divergence is the
    # P_{k-1} projection of 3 det, so only close to 3
    for e in np.flatnonzero(cm.is_affine)[:10]:
        assert eval_divergence_physical(v, int(e), cm, dm, _random_ref(rng)) == pytest.approx(3.0, abs=1e-9)
    for e in np.flatnonzero(~cm.is_affine)[:10]:
        assert eval_divergence_physical(v, int(e), cm, dm, _random_ref(rng)) == pytest.approx(3.0, abs=2e-2)


def _poly_field(k, coef):
    """Vector polynomial of degree <= k with coefficients coef (3, nm)."""
    from curvedstokes._poly import monomial_exponents
    exps = monomial_exponents(k)

    def f(x):
        mono = np.prod(x[..., None, :] ** exps, axis=-1)
        return mono @ coef.T
    return f


@settings(max_examples=15, deadline=None)
@given(k=st.integers(1, 3), seed=st.integers(0, 2 ** 31 - 1))
def test_interpolation_reproduces_polynomials(cube2, k, seed):
    from curvedstokes._poly import monomial_exponents
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((3, len(monomial_exponents(k))))
    f = _poly_field(k, coef)
    cm = CurvedMesh(cube2, degree=1)
    dm = DofMap(cube2, k)
    v = bdm_interpolate(f, cm, dm)
    for _ in range(5):
        e = int(rng.integers(cube2.n_elements))
        x = _random_ref(rng)
        y = cm.evaluate(np.array([e]), x[None], second=False)["x"][0, 0]
        np.testing.assert_allclose(eval_velocity_physical(v, e, cm, dm, x), f(y), atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_commuting_interpolant_is_divergence_free(cube2, rng, k):
    # u = curl(0, 0, psi) + curl(psi, 0, 0) with psi cubic: divergence free, degree 2
    def u(x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([3 * Y ** 2 * Z, -3 * X ** 2 * Z + X * Y ** 2, -2 * X * Y * Z + X ** 3], -1)
    cm = CurvedMesh(cube2, degree=1)
    dm = DofMap(cube2, k)
    v = bdm_interpolate(u, cm, dm)
    for _ in range(30):
        e = int(rng.integers(cube2.n_elements))
        assert abs(eval_divergence_physical(v, e, cm, dm, _random_ref(rng))) <= 1e-10


@pytest.mark.parametrize("k", [2, 3])
def test_pressure_projection(cube2, curved_ball0, k):
    cm = CurvedMesh(cube2, degree=1)
    dm = DofMap(cube2, k)

    def p(x):
        return x[..., 0] - 2 * x[..., 1] + (x[..., 2] ** 2 if k == 3 else 0.0)
    ph = pressure_project(p, cm, dm, zero_mean=False)
    assert pressure_l2_error(p, ph, cm, dm) <= 1e-12
    # idempotent: the projection is reproduced after a second pass
    ph2 = pressure_project(p, cm, dm, zero_mean=False)
    np.testing.assert_allclose(ph, ph2, atol=1e-13)
    const = pressure_project(lambda x: np.full(x.shape[:-1], 4.2), cm, dm)
    assert np.abs(const).max() <= 1e-12
    cmb, dmb = curved_ball0
    q = pressure_project(lambda x: np.exp(x[..., 0]), cmb, dmb)
    assert abs(pressure_mean(q, cmb, dmb)[0]) <= 1e-12


def test_zero_normal_trace_constraint(ball0):
    dm = DofMap(ball0, 2)
    view = impose_zero_normal_trace(dm)
    full = view.expand(np.ones(len(view.free)))
    assert np.all(full[dm.boundary_normal_dofs] == 0)
    # face test functions sum to one, so the boundary flux is the sum of the moments
    assert full[dm.boundary_normal_dofs].sum() == 0
    with pytest.raises(ValueError):
        impose_zero_normal_trace(dm, np.zeros(3))


def test_flux_balanced_boundary_moments(curved_ball0):
    cm, dm = curved_ball0

    def g(x):
        return x + np.array([0.3, 0.0, 0.0])  # div g = 3
    raw = boundary_normal_moments(g, cm, dm, balance=False)
    vol = pressure_mean(np.zeros(dm.n_pressure), cm, dm)[1]
    assert raw.sum() == pytest.approx(3 * vol, rel=1e-8)
    bal = boundary_normal_moments(g, cm, dm)
    assert abs(bal.sum()) <= 1e-12


def test_lid_has_no_normal_moments():
    mesh = generate_cavity_mesh(resolution=(4, 2))
    cm = CurvedMesh(mesh, degree=2)
    dm = DofMap(mesh, 2)
    assert np.abs(boundary_normal_moments(lid_velocity, cm, dm)).max() <= 1e-14

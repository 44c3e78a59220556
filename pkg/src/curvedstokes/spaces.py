"""Parametric BDM(k) velocity and discontinuous P(k-1) pressure spaces.

Velocity functions are pushed forward with the contravariant Piola map
``v o M_h = J v_hat / det J``; pressure functions are composed with ``M_h^{-1}``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._poly import (FACE_VERTICES, REF_VERTICES, eval_monomials, homogeneous_exponents,
                    lattice_indices, monomial_exponents, monomial_gradients)
from .geometry import REF_FACE_AREAS, REF_FACE_NORMALS, face_to_ref
from .quadrature import tet_quadrature, tri_quadrature


# ---------------------------------------------------------------------------
# reference bases

def _face_lattice(k):
    return np.array(lattice_indices(k, 3), dtype=int)


class FaceTestBasis:
    """Nodal P_k basis on a triangle in parameters (s, t), bary = (1-s-t, s, t)."""

    def __init__(self, k):
        self.k = k
        self.multi_index = _face_lattice(k)
        nodes = self.multi_index[:, 1:] / k
        self.exps = monomial_exponents(k, 2)
        self.coef = np.linalg.inv(eval_monomials(nodes, self.exps))

    def __call__(self, st):
        return eval_monomials(st, self.exps) @ self.coef


def nedelec_first_kind(r):
    """Monomial coefficients (n, 3, m) of a basis of the Nedelec space N_r.

    N_r = P_{r-1}^3 + {x cross p : p homogeneous of degree r-1}; N_1 has
    dimension 6. Coefficients are w.r.t. monomials of degree <= r.
    """
    exps = monomial_exponents(r)
    index = {tuple(e): i for i, e in enumerate(exps)}
    m = len(exps)
    span = []
    for e in monomial_exponents(r - 1):
        for c in range(3):
            v = np.zeros((3, m))
            v[c, index[tuple(e)]] = 1.0
            span.append(v)
    for e in homogeneous_exponents(r - 1):
        for c in range(3):
            # x cross (mono * e_c)
            v = np.zeros((3, m))
            for i in range(3):
                for j in range(3):
                    eps = _levi_civita(i, j, c)
                    if eps:
                        ex = np.array(e)
                        ex[j] += 1
                        v[i, index[tuple(ex)]] += eps
            span.append(v)
    S = np.array(span).reshape(len(span), -1)
    u, sv, vt = np.linalg.svd(S, full_matrices=False)
    rank = int((sv > 1e-10 * sv[0]).sum())
    return vt[:rank].reshape(rank, 3, m), exps


def _levi_civita(i, j, k):
    if len({i, j, k}) < 3:
        return 0
    return 1 if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)) else -1


# polynomials are expanded in monomials of y = SCALE * (x - CENTROID), which
# keeps the expansion coefficients of high-degree bases moderate
CENTROID = np.full(3, 0.25)
SCALE = 4.0


def _centred(x):
    return SCALE * (np.asarray(x, dtype=float) - CENTROID)


def orthonormal_coefficients(degree):
    """Centred-monomial coefficients (nm, nm) of an L2-orthonormal basis of P_degree."""
    exps = monomial_exponents(degree)
    q = tet_quadrature(max(2 * degree, 1))
    V = eval_monomials(_centred(q.points), exps)
    L = np.linalg.cholesky(V.T @ (q.weights[:, None] * V))
    return np.linalg.inv(L).T


class BdmReferenceBasis:
    """BDM(k) shape functions on the reference tet, dual to its DOF functionals.

    Local DOFs: for each local face i (opposite vertex i), moments of v.n
    against the nodal P_k basis of the face (face vertices in increasing local
    order); then interior moments against N_{k-1}.
    """

    def __init__(self, k):
        if k not in (1, 2, 3):
            raise ValueError("BDM degree must be 1, 2 or 3")
        self.degree = k
        self.exps = monomial_exponents(k)
        nm = len(self.exps)
        self.shape_count = 3 * nm
        self.face_test = FaceTestBasis(k)
        self.n_face_dofs = len(self.face_test.multi_index)
        self.n_interior_dofs = self.shape_count - 4 * self.n_face_dofs
        self.face_multi_index = self.face_test.multi_index
        # candidates e_c * P_m with P_m orthonormal on the reference tet keep
        # the functional matrix well conditioned
        self._ortho = orthonormal_coefficients(k)
        self.functionals = self._functional_matrix()  # on monomial candidates
        D = np.einsum("icm,mn->icn", self.functionals.reshape(-1, 3, nm), self._ortho)
        cand = np.linalg.inv(D.reshape(self.shape_count, -1).T).reshape(self.shape_count, 3, nm)
        self.coef = np.einsum("bcn,mn->bcm", cand, self._ortho)

    def _functional_matrix(self):
        k = self.degree
        nm = len(self.exps)
        nb = self.shape_count
        rows = []
        fq = tri_quadrature(2 * k)
        qv = self.face_test(fq.points)  # (nq, nf)
        for f in range(4):
            x = face_to_ref(f, fq.points)
            mono = eval_monomials(_centred(x), self.exps)  # (nq, nm)
            n = REF_FACE_NORMALS[f]
            w = fq.weights * 2.0 * REF_FACE_AREAS[f]
            # functional j applied to candidate (c, m): sum_q w q_j n_c mono_m
            block = np.einsum("q,qj,c,qm->jcm", w, qv, n, mono)
            rows.append(block.reshape(-1, nb))
        if k > 1:
            z, zexps = nedelec_first_kind(k - 1)
            tq = tet_quadrature(2 * k)
            zval = np.einsum("icm,qm->qic", z, eval_monomials(tq.points, zexps))
            mono = eval_monomials(_centred(tq.points), self.exps)
            block = np.einsum("q,qic,qm->icm", tq.weights, zval, mono)
            rows.append(block.reshape(-1, nb))
            self.interior_test = (z, zexps)
        else:
            self.interior_test = None
        return np.concatenate(rows)

    def face_dofs(self, local_face):
        nf = self.n_face_dofs
        return np.arange(local_face * nf, (local_face + 1) * nf)

    def values(self, x):
        """(..., nb, 3)"""
        return np.einsum("bcm,...m->...bc", self.coef, eval_monomials(_centred(x), self.exps))

    def gradients(self, x):
        """(..., nb, 3, 3) with [.., b, i, j] = d v_i / d xh_j."""
        return SCALE * np.einsum("bcm,...mj->...bcj", self.coef,
                                 monomial_gradients(_centred(x), self.exps))

    def divergence(self, x):
        g = self.gradients(x)
        return np.trace(g, axis1=-2, axis2=-1)

    def apply_functionals(self, vals_face, vals_interior, face_rule, tet_rule):
        """Apply the local DOF functionals to a pulled-back field.

        vals_face : (..., 4, nq_face, 3) reference field on each local face
        vals_interior : (..., nq_tet, 3)
        """
        qv = self.face_test(face_rule.points)
        out = []
        for f in range(4):
            w = face_rule.weights * 2.0 * REF_FACE_AREAS[f]
            vn = vals_face[..., f, :, :] @ REF_FACE_NORMALS[f]
            out.append(np.einsum("q,...q,qj->...j", w, vn, qv))
        if self.interior_test is not None:
            z, zexps = self.interior_test
            zval = np.einsum("icm,qm->qic", z, eval_monomials(tet_rule.points, zexps))
            out.append(np.einsum("q,qic,...qc->...i", tet_rule.weights, zval, vals_interior))
        return np.concatenate(out, axis=-1)


class PressureReferenceBasis:
    """P_{k-1} basis orthonormal in L2 of the reference tet."""

    def __init__(self, degree):
        self.degree = degree
        self.exps = monomial_exponents(degree)
        self.coef = orthonormal_coefficients(degree)  # (nm, nb)
        self.shape_count = len(self.exps)
        # value of the constant basis function (first monomial is 1)
        self.constant_value = float(self.coef[0, 0])

    def values(self, x):
        return eval_monomials(_centred(x), self.exps) @ self.coef


@lru_cache(maxsize=None)
def bdm_basis(k):
    return BdmReferenceBasis(k)


@lru_cache(maxsize=None)
def pressure_basis(k):
    return PressureReferenceBasis(k - 1)


# ---------------------------------------------------------------------------
# dof map

class DofMap:
    """Global numbering of BDM(k) velocity and P(k-1) pressure DOFs.

    Velocity DOFs of face f are ``f * nf + j`` where j enumerates the face
    lattice in the order of the face's sorted global vertex ids; interior DOFs
    follow. ``sign[e, i]`` is -1 on face DOFs of the element that does not own
    the face, so that local functions with outward normals combine into
    H(div)-conforming global functions.
    """

    def __init__(self, mesh, k):
        self.mesh = mesh
        self.degree = k
        self.basis = bdm_basis(k)
        self.pbasis = pressure_basis(k)
        nf = self.basis.n_face_dofs
        ni = self.basis.n_interior_dofs
        ne = mesh.n_elements
        nF = mesh.n_faces
        self.n_face_dofs = nf
        self.n_interior_dofs = ni
        nb = self.basis.shape_count
        l2g = np.empty((ne, nb), dtype=np.int64)
        sign = np.ones((ne, nb))
        lattice = _face_lattice(k)
        code = lattice @ np.array([(k + 1) ** 2, k + 1, 1])
        lookup = -np.ones((k + 1) ** 3, dtype=np.int64)
        lookup[code] = np.arange(len(code))
        elems = np.arange(ne)
        for lf in range(4):
            f = mesh.element_faces[:, lf]
            gverts = mesh.tets[:, FACE_VERTICES[lf]]  # (ne, 3) in local order
            order = np.argsort(gverts, axis=1)
            mi = lattice[None, :, :]  # (1, nf, 3) local-order multi-indices
            canon = np.take_along_axis(np.broadcast_to(mi, (ne, nf, 3)),
                                       np.broadcast_to(order[:, None, :], (ne, nf, 3)), axis=2)
            idx = lookup[canon @ np.array([(k + 1) ** 2, k + 1, 1])]
            l2g[:, lf * nf:(lf + 1) * nf] = f[:, None] * nf + idx
            owner = mesh.face_elements[f, 0] == elems
            sign[:, lf * nf:(lf + 1) * nf] = np.where(owner, 1.0, -1.0)[:, None]
        l2g[:, 4 * nf:] = nF * nf + elems[:, None] * ni + np.arange(ni)
        self.l2g = l2g
        self.sign = sign
        self.n_velocity = nF * nf + ne * ni
        npl = self.pbasis.shape_count
        self.n_pressure_local = npl
        self.p_l2g = elems[:, None] * npl + np.arange(npl)
        self.n_pressure = ne * npl
        # global face DOFs in the owner element's local order
        owner = mesh.face_elements[:, 0]
        cols = mesh.face_local[:, 0][:, None] * nf + np.arange(nf)
        self.face_owner_dofs = np.take_along_axis(l2g[owner], cols, axis=1)
        bf = mesh.boundary_faces
        self.boundary_normal_dofs = self.face_owner_dofs[bf].ravel()
        for arr in (self.l2g, self.sign, self.p_l2g, self.boundary_normal_dofs,
                    self.face_owner_dofs):
            arr.setflags(write=False)

    @property
    def free_velocity_dofs(self):
        mask = np.ones(self.n_velocity, dtype=bool)
        mask[self.boundary_normal_dofs] = False
        return np.flatnonzero(mask)

    def constant_pressure_vector(self):
        """Coefficients of the constant function 1 in the pressure space."""
        z = np.zeros(self.n_pressure)
        z[self.p_l2g[:, 0]] = 1.0 / self.pbasis.constant_value
        return z


def build_dof_map(mesh, degree):
    return DofMap(mesh, degree)


@dataclass
class FieldCoefficients:
    velocity: np.ndarray
    pressure: np.ndarray

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.pressure = np.asarray(self.pressure, dtype=float)

    def check(self, dofmap):
        if len(self.velocity) != dofmap.n_velocity or len(self.pressure) != dofmap.n_pressure:
            raise ValueError("coefficient lengths do not match the dof map")
        return self


# ---------------------------------------------------------------------------
# physical evaluation

def piola_values(geo, vhat):
    """J vhat / det for geo from CurvedMesh.evaluate; vhat (Q, nb, 3) or (E, Q, nb, 3)."""
    sub = "qbj" if vhat.ndim == 3 else "eqbj"
    return np.einsum(f"eqij,{sub}->eqbi", geo["J"], vhat) / geo["det"][:, :, None, None]


def piola_gradients(geo, vhat, ghat, curved=None):
    """Physical gradients (E, Q, nb, 3, 3) of Piola-mapped fields.

    grad v = [J G J^{-1} - (J vhat) (grad det)^T J^{-1} / det + D J^{-1}] / det
    with G the reference gradient and D_il = sum_k vhat_k d2x_i/dxh_l dxh_k.
    """
    shared = vhat.ndim == 3
    det = geo["det"]
    J, Jinv = geo["J"], geo["Jinv"]
    if shared:
        out = np.einsum("eqik,qbkl,eqlj->eqbij", J, ghat, Jinv, optimize=True)
    else:
        out = np.einsum("eqik,eqbkl,eqlj->eqbij", J, ghat, Jinv, optimize=True)
    if curved is None:
        curved = np.ones(len(det), dtype=bool)
    cur = np.flatnonzero(curved)
    if cur.size and "d2x" in geo:
        vh = vhat if shared else vhat[cur]
        sub = "qbk" if shared else "eqbk"
        Jc, Jic, dc = J[cur], Jinv[cur], det[cur]
        Jv = np.einsum(f"eqik,{sub}->eqbi", Jc, vh)
        gdJ = np.einsum("eql,eqlj->eqj", geo["ddet"][cur], Jic)
        out[cur] -= np.einsum("eqbi,eqj->eqbij", Jv, gdJ) / dc[:, :, None, None, None]
        D = np.einsum(f"{sub},eqilk->eqbil", vh, geo["d2x"][cur])
        out[cur] += np.einsum("eqbil,eqlj->eqbij", D, Jic)
    return out / det[:, :, None, None, None]


def piola_divergence(geo, divhat):
    """div v = div_hat vhat / det; divhat (Q, nb) or (E, Q, nb)."""
    if divhat.ndim == 2:
        return divhat[None] / geo["det"][:, :, None]
    return divhat / geo["det"][:, :, None]


def local_coefficients(dofmap, velocity, elems=None):
    """Element-local (outward-normal) coefficients from a global vector."""
    l2g = dofmap.l2g if elems is None else dofmap.l2g[elems]
    sign = dofmap.sign if elems is None else dofmap.sign[elems]
    return velocity[l2g] * sign


def _as_points(ref_point):
    return np.asarray(ref_point, dtype=float).reshape(1, 3)


def eval_velocity_physical(coeffs, element, cmesh, dofmap, ref_point):
    """Physical velocity u_h(M_h(x_hat)) on one element."""
    x = _as_points(ref_point)
    geo = cmesh.evaluate(np.array([element]), x, second=False)
    vals = piola_values(geo, dofmap.basis.values(x))[0, 0]
    c = local_coefficients(dofmap, _velocity(coeffs), np.array([element]))[0]
    return c @ vals


def eval_velocity_gradient_physical(coeffs, element, cmesh, dofmap, ref_point):
    """Physical gradient of u_h at M_h(x_hat) on one element (3x3)."""
    x = _as_points(ref_point)
    e = np.array([element])
    geo = cmesh.evaluate(e, x, second=True)
    b = dofmap.basis
    g = piola_gradients(geo, b.values(x), b.gradients(x), cmesh.is_affine[e] == False)[0, 0]
    c = local_coefficients(dofmap, _velocity(coeffs), e)[0]
    return np.einsum("b,bij->ij", c, g)


def eval_divergence_physical(coeffs, element, cmesh, dofmap, ref_point):
    x = _as_points(ref_point)
    e = np.array([element])
    geo = cmesh.evaluate(e, x, second=False)
    d = piola_divergence(geo, dofmap.basis.divergence(x))[0, 0]
    c = local_coefficients(dofmap, _velocity(coeffs), e)[0]
    return float(c @ d)


def _velocity(coeffs):
    return coeffs.velocity if isinstance(coeffs, FieldCoefficients) else np.asarray(coeffs)


def iter_chunks(n, size=256):
    for start in range(0, n, size):
        yield np.arange(start, min(start + size, n))


# ---------------------------------------------------------------------------
# interpolation and projection

def _face_moments_physical(field, cmesh, basis, elems, local_faces, face_rule):
    """Local face functionals of ``field`` on the given (element, local face) pairs."""
    qv = basis.face_test(face_rule.points)
    out = np.empty((len(elems), basis.n_face_dofs))
    for lf in range(4):
        sel = np.flatnonzero(local_faces == lf)
        if not sel.size:
            continue
        ref = face_to_ref(lf, face_rule.points)
        geo = cmesh.evaluate(elems[sel], ref, second=False)
        v = field(geo["x"])  # (E, Q, 3)
        # v_hat . n_hat = det (J^{-1} v) . n_hat = det v . (J^{-T} n_hat)
        vn = geo["det"] * (np.einsum("eqkc,eqc->eqk", geo["Jinv"], v) @ REF_FACE_NORMALS[lf])
        w = face_rule.weights * 2.0 * REF_FACE_AREAS[lf]
        out[sel] = np.einsum("q,eq,qj->ej", w, vn, qv)
    return out


def bdm_interpolate(field, cmesh, dofmap, quad_degree=None):
    """Canonical BDM interpolant of a vector field given at physical points.

    ``field`` maps an (..., 3) array of points to (..., 3) values. Face
    moments are taken from the owner element of each face.
    """
    k = dofmap.degree
    deg = quad_degree or 2 * k + 2
    mesh = cmesh.mesh
    basis = dofmap.basis
    nf = basis.n_face_dofs
    out = np.zeros(dofmap.n_velocity)
    fr = tri_quadrature(deg)
    owners = mesh.face_elements[:, 0]
    lfaces = mesh.face_local[:, 0]
    for chunk in iter_chunks(mesh.n_faces, 2048):
        out[dofmap.face_owner_dofs[chunk].ravel()] = _face_moments_physical(
            field, cmesh, basis, owners[chunk], lfaces[chunk], fr).ravel()
    if basis.n_interior_dofs:
        tr = tet_quadrature(deg)
        z, zexps = basis.interior_test
        zval = np.einsum("icm,qm->qic", z, eval_monomials(tr.points, zexps))
        for chunk in iter_chunks(mesh.n_elements, 1024):
            geo = cmesh.evaluate(chunk, tr.points, second=False)
            v = field(geo["x"])
            vhat = geo["det"][..., None] * np.einsum("eqij,eqj->eqi", geo["Jinv"], v)
            vals = np.einsum("q,qic,eqc->ei", tr.weights, zval, vhat)
            out[dofmap.l2g[chunk, 4 * nf:]] = vals
    return out


def boundary_normal_moments(g, cmesh, dofmap, quad_degree=None, balance=True):
    """Face moments of g.n on boundary faces, in boundary_normal_dofs order.

    With ``balance`` the total flux is removed by subtracting a uniform normal
    flux, so the constrained problem stays compatible with div u = 0 even when
    quadrature of g.n on curved faces is inexact.
    """
    k = dofmap.degree
    deg = quad_degree or 2 * k + 2
    mesh = cmesh.mesh
    bf = mesh.boundary_faces
    fr = tri_quadrature(deg)
    vals = _face_moments_physical(g, cmesh, dofmap.basis, mesh.face_elements[bf, 0],
                                  mesh.face_local[bf, 0], fr)
    if balance and len(bf):
        # moments of a unit normal flux: int_F q_j ds
        qds = _face_q_integrals(cmesh, dofmap.basis, bf, fr)
        vals = vals - vals.sum() / qds.sum() * qds
    return vals.ravel()


def _face_q_integrals(cmesh, basis, faces, face_rule):
    mesh = cmesh.mesh
    elems = mesh.face_elements[faces, 0]
    lfs = mesh.face_local[faces, 0]
    qv = basis.face_test(face_rule.points)
    out = np.empty((len(faces), basis.n_face_dofs))
    for lf in range(4):
        sel = np.flatnonzero(lfs == lf)
        if not sel.size:
            continue
        geo = cmesh.evaluate(elems[sel], face_to_ref(lf, face_rule.points), second=False)
        fac = geo["det"] * np.linalg.norm(np.einsum("eqji,j->eqi", geo["Jinv"], REF_FACE_NORMALS[lf]), axis=-1)
        w = face_rule.weights * 2.0 * REF_FACE_AREAS[lf]
        out[sel] = np.einsum("q,eq,qj->ej", w, fac, qv)
    return out


def pressure_mean(pressure, cmesh, dofmap, quad_degree=None):
    """(integral of p_h over Omega_h, |Omega_h|)."""
    deg = quad_degree or 2 * dofmap.degree + 2
    tr = tet_quadrature(deg)
    psi = dofmap.pbasis.values(tr.points)  # (Q, np)
    total = 0.0
    vol = 0.0
    for chunk in iter_chunks(cmesh.n_elements, 2048):
        geo = cmesh.evaluate(chunk, tr.points, second=False)
        wdet = tr.weights * geo["det"]
        vals = np.einsum("qb,eb->eq", psi, pressure[dofmap.p_l2g[chunk]])
        total += float((wdet * vals).sum())
        vol += float(wdet.sum())
    return total, vol


def shift_pressure_mean(pressure, cmesh, dofmap, quad_degree=None):
    """Subtract the Omega_h mean from a pressure coefficient vector."""
    total, vol = pressure_mean(pressure, cmesh, dofmap, quad_degree)
    return pressure - (total / vol) * dofmap.constant_pressure_vector()


def pressure_project(field, cmesh, dofmap, quad_degree=None, zero_mean=True):
    """Element-wise L2(Omega_h) projection onto the parametric pressure space.

    Solves the det-weighted reference mass system on every element.
    """
    deg = quad_degree or 2 * dofmap.degree + 2
    tr = tet_quadrature(deg)
    psi = dofmap.pbasis.values(tr.points)
    out = np.zeros(dofmap.n_pressure)
    for chunk in iter_chunks(cmesh.n_elements, 2048):
        geo = cmesh.evaluate(chunk, tr.points, second=False)
        wdet = tr.weights * geo["det"]
        M = np.einsum("eq,qa,qb->eab", wdet, psi, psi)
        b = np.einsum("eq,eq,qa->ea", wdet, field(geo["x"]), psi)
        out[dofmap.p_l2g[chunk]] = np.linalg.solve(M, b[..., None])[..., 0]
    if zero_mean:
        out = shift_pressure_mean(out, cmesh, dofmap, quad_degree)
    return out


# ---------------------------------------------------------------------------
# boundary constraints

@dataclass
class ConstrainedView:
    """Split of velocity DOFs into free and prescribed (boundary normal) parts."""
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    n_velocity: int

    def expand(self, free_values):
        out = np.zeros(self.n_velocity)
        out[self.free] = free_values
        out[self.fixed] = self.fixed_values
        return out


def impose_zero_normal_trace(dofmap, values=None):
    """Constrain boundary normal-moment DOFs to ``values`` (zero by default)."""
    fixed = np.asarray(dofmap.boundary_normal_dofs)
    vals = np.zeros(len(fixed)) if values is None else np.asarray(values, dtype=float)
    if vals.shape != fixed.shape:
        raise ValueError("one value per boundary normal DOF expected")
    return ConstrainedView(dofmap.free_velocity_dofs, fixed, vals, dofmap.n_velocity)

"""Exact boundary geometry and piecewise degree-k Lagrange geometry maps.

The curved map of an element interpolates the straight tet at the degree-k
lattice, except that lattice nodes on curved boundary faces and edges are
projected onto the exact boundary. Elements with fewer than two vertices on
the curved boundary therefore stay exactly affine.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._poly import (EDGE_VERTICES, FACE_VERTICES, REF_VERTICES, eval_monomials,
                    lagrange_coefficients, monomial_gradients, monomial_hessians,
                    tet_lattice)

CURVED_TOL = 1e-9


class SingularMapError(ValueError):
    """Raised when a geometry map has non-positive Jacobian determinant."""

    def __init__(self, message, elements=()):
        super().__init__(message)
        self.elements = list(elements)


@dataclass(frozen=True)
class ExactGeometry:
    """Exact boundary description: ``sphere``, ``cube_minus_sphere`` or ``identity``."""
    kind: str = "identity"
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sphere", "cube_minus_sphere", "identity"):
            raise ValueError(f"unknown geometry kind {self.kind!r}")

    def curved_mask(self, x, tol=CURVED_TOL):
        """True where x lies on the curved (spherical) part of the boundary."""
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return np.zeros(x.shape[:-1], dtype=bool)
        dist = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return np.abs(dist - self.radius) <= tol * max(self.radius, 1.0)

    def project(self, x):
        """Radial projection onto the sphere (identity for flat geometries)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return x.copy()
        c = np.asarray(self.center)
        d = x - c
        return c + self.radius * d / np.linalg.norm(d, axis=-1, keepdims=True)

    def boundary_distance(self, x):
        """Distance from x to the exact boundary."""
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center)
        sph = np.abs(np.linalg.norm(x - c, axis=-1) - self.radius)
        if self.kind == "sphere":
            return sph
        if self.kind == "cube_minus_sphere":
            cube = np.min(np.concatenate([x, 1.0 - x], axis=-1), axis=-1)
            return np.minimum(sph, np.abs(cube))
        raise ValueError("identity geometry has no boundary description")


@dataclass(frozen=True)
class JacobianData:
    J: np.ndarray
    J_inv: np.ndarray
    J_det: float
    second_derivatives: np.ndarray  # [i, j, k] = d^2 x_i / dxh_j dxh_k
    det_gradient: np.ndarray


@dataclass(frozen=True)
class CurvedElementMap:
    degree: int
    node_coords: np.ndarray
    is_affine: bool
    element: int = -1

    def __call__(self, ref_points):
        basis = geometry_basis(self.degree)
        return basis.values(ref_points) @ self.node_coords


class GeometryBasis:
    """Nodal Lagrange basis of degree k on the reference tet."""

    def __init__(self, degree):
        self.degree = degree
        self.nodes, self.multi_index = tet_lattice(degree)
        self.coef, self.exps = lagrange_coefficients(self.nodes, degree)

    def values(self, x):
        return eval_monomials(x, self.exps) @ self.coef

    def gradients(self, x):
        g = monomial_gradients(x, self.exps)  # (..., m, 3)
        return np.einsum("...md,mn->...nd", g, self.coef)

    def hessians(self, x):
        h = monomial_hessians(x, self.exps)
        return np.einsum("...mab,mn->...nab", h, self.coef)


@lru_cache(maxsize=None)
def geometry_basis(degree):
    return GeometryBasis(degree)


def _bary_of_nodes(degree):
    basis = geometry_basis(degree)
    return basis.multi_index / max(degree, 1)


class CurvedMesh:
    """All element geometry maps of a mesh, evaluated in batches.

    Attributes
    ----------
    nodes : (ne, n_nodes, 3) array of physical Lagrange node positions
    is_affine : (ne,) bool array
    """

    def __init__(self, mesh, geometry=None, degree=1):
        if degree not in (1, 2, 3):
            raise ValueError("geometry degree must be 1, 2 or 3")
        self.mesh = mesh
        self.geometry = geometry if geometry is not None else mesh.boundary_geometry
        self.degree = degree
        self.basis = geometry_basis(degree)
        bary = _bary_of_nodes(degree)  # (nn, 4)
        verts = mesh.vertices[mesh.tets]  # (ne, 4, 3)
        self.vertex_coords = verts
        nodes = np.einsum("nv,evc->enc", bary, verts)
        ne = mesh.n_elements
        self.is_affine = np.ones(ne, dtype=bool)
        if degree > 1 and self.geometry.kind != "identity":
            self._curve(nodes, bary)
        self.nodes = nodes
        # exact affine data for straight elements
        self.affine_J = np.transpose(verts[:, 1:] - verts[:, :1], (0, 2, 1))
        self.affine_det = np.linalg.det(self.affine_J)
        self._check_positive()

    def _curve(self, nodes, bary):
        mesh, geom = self.mesh, self.geometry
        bfaces = mesh.faces[mesh.is_boundary_face]
        curved_face = geom.curved_mask(mesh.vertices[bfaces]).all(axis=1)
        cfaces = bfaces[curved_face]
        nv = mesh.n_vertices
        cedges = np.sort(np.concatenate([cfaces[:, [0, 1]], cfaces[:, [0, 2]], cfaces[:, [1, 2]]]), axis=1)
        edge_keys = set((cedges[:, 0] * nv + cedges[:, 1]).tolist())
        face_keys = set(map(tuple, np.sort(cfaces, axis=1).tolist()))
        tets = mesh.tets
        touched = np.flatnonzero(mesh.on_boundary[tets].sum(axis=1) >= 2)
        for e in touched:
            t = tets[e]
            project = np.zeros(len(bary), dtype=bool)
            for lf, fv in enumerate(FACE_VERTICES):
                if tuple(sorted(t[fv])) in face_keys:
                    project |= bary[:, lf] == 0
            for a, b in EDGE_VERTICES:
                lo, hi = sorted((t[a], t[b]))
                if lo * nv + hi in edge_keys:
                    others = [i for i in range(4) if i not in (a, b)]
                    project |= (bary[:, others[0]] == 0) & (bary[:, others[1]] == 0)
            project[:4] = False  # vertices are already exact
            if project.any():
                nodes[e, project] = geom.project(nodes[e, project])
                self.is_affine[e] = False

    def _check_positive(self):
        from .quadrature import tet_quadrature
        pts = np.concatenate([tet_quadrature(2 * self.degree + 2).points, REF_VERTICES])
        curved = np.flatnonzero(~self.is_affine)
        bad = list(np.flatnonzero(self.affine_det <= 0))
        if curved.size:
            J = self._curved_jacobian(curved, pts)
            det = np.linalg.det(J)
            bad += curved[(det <= 0).any(axis=1)].tolist()
        if bad:
            raise SingularMapError(f"non-positive Jacobian on elements {sorted(bad)[:10]}", bad)

    # -- per-element views ------------------------------------------------
    @property
    def n_elements(self):
        return self.mesh.n_elements

    def element_map(self, e):
        return CurvedElementMap(self.degree, self.nodes[e].copy(), bool(self.is_affine[e]), int(e))

    # -- batched evaluation -------------------------------------------------
    def _curved_jacobian(self, elems, pts):
        dN = self.basis.gradients(pts)
        if dN.ndim == 3:
            return np.einsum("qnj,enc->eqcj", dN, self.nodes[elems])
        return np.einsum("eqnj,enc->eqcj", dN, self.nodes[elems])

    def points(self, elems, ref_points):
        """Physical images M_h(x_hat); ref_points is (nq, 3) or (len(elems), nq, 3)."""
        N = self.basis.values(ref_points)
        if N.ndim == 2:
            return np.einsum("qn,enc->eqc", N, self.nodes[elems])
        return np.einsum("eqn,enc->eqc", N, self.nodes[elems])

    def evaluate(self, elems, ref_points, second=True):
        """Jacobian data for elements ``elems`` at reference points.

        Returns a dict with arrays ``x`` (E, Q, 3), ``J``, ``Jinv`` (E, Q, 3, 3),
        ``det`` (E, Q) and, when ``second`` is set, ``d2x`` (E, Q, 3, 3, 3) and
        ``ddet`` (E, Q, 3). Affine elements use the exact vertex-difference
        Jacobian and zero second derivatives.
        """
        elems = np.asarray(elems)
        ref_points = np.asarray(ref_points, dtype=float)
        shared = ref_points.ndim == 2
        nq = ref_points.shape[-2]
        E = len(elems)
        x = self.points(elems, ref_points)
        J = np.empty((E, nq, 3, 3))
        aff = self.is_affine[elems]
        J[aff] = self.affine_J[elems[aff]][:, None]
        d2x = np.zeros((E, nq, 3, 3, 3)) if second else None
        cur = np.flatnonzero(~aff)
        if cur.size:
            ce = elems[cur]
            rp = ref_points if shared else ref_points[cur]
            J[cur] = self._curved_jacobian(ce, rp)
            if second:
                H = self.basis.hessians(rp)
                if shared:
                    d2x[cur] = np.einsum("qnab,enc->eqcab", H, self.nodes[ce])
                else:
                    d2x[cur] = np.einsum("eqnab,enc->eqcab", H, self.nodes[ce])
        det = np.linalg.det(J)
        Jinv = np.linalg.inv(J)
        out = {"x": x, "J": J, "Jinv": Jinv, "det": det}
        if second:
            # d det / d xh_j = det * tr(J^{-1} dJ/dxh_j), with dJ_ik/dxh_j = d2x[i,k,j]
            ddet = det[..., None] * np.einsum("eqki,eqikj->eqj", Jinv, d2x)
            out["d2x"] = d2x
            out["ddet"] = ddet
        return out


def build_curved_map(element, mesh, geometry, degree):
    """Curved map of a single element (convenience wrapper around CurvedMesh)."""
    return CurvedMesh(mesh, geometry, degree).element_map(element)


def jacobian_at(cmap, ref_point):
    """Analytic Jacobian data of one element map at one reference point."""
    basis = geometry_basis(cmap.degree)
    x = np.asarray(ref_point, dtype=float).reshape(1, 3)
    J = np.einsum("nj,nc->cj", basis.gradients(x)[0], cmap.node_coords)
    H = np.einsum("nab,nc->cab", basis.hessians(x)[0], cmap.node_coords)
    det = float(np.linalg.det(J))
    if det <= 0:
        raise SingularMapError(f"singular map at {ref_point} (det={det:g})", [cmap.element])
    Jinv = np.linalg.inv(J)
    ddet = det * np.einsum("ki,ikj->j", Jinv, H)
    return JacobianData(J, Jinv, det, H, ddet)


REF_FACE_NORMALS = np.array([[1.0, 1.0, 1.0], [-1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])
REF_FACE_NORMALS[0] /= np.sqrt(3.0)
REF_FACE_AREAS = np.array([np.sqrt(3.0) / 2.0, 0.5, 0.5, 0.5])


def face_to_ref(local_face, st):
    """Map face parameters (s, t) to reference coordinates on ``local_face``.

    The face vertices are taken in increasing local order: a + s (b - a) + t (c - a).
    """
    a, b, c = REF_VERTICES[FACE_VERTICES[local_face]]
    st = np.asarray(st, dtype=float)
    return a + st[..., :1] * (b - a) + st[..., 1:2] * (c - a)


def surface_measure_factor(cmap, local_face, ref_face_point):
    """J_det * |J^{-T} n_hat| at a point of a reference face.

    ``ref_face_point`` holds the (s, t) face parameters; ds equals this factor
    times the reference surface element.
    """
    x = face_to_ref(local_face, ref_face_point)
    jd = jacobian_at(cmap, x)
    return float(jd.J_det * np.linalg.norm(jd.J_inv.T @ REF_FACE_NORMALS[local_face]))


def face_gram_factor(cmap, local_face, ref_face_point, step=None):
    """sqrt(det G) of the physical face parametrisation, per unit reference area.

    Independent of the Piola identity: uses the tangent vectors of the
    parametrisation x(s, t) directly.
    """
    basis = geometry_basis(cmap.degree)
    a, b, c = REF_VERTICES[FACE_VERTICES[local_face]]
    x = face_to_ref(local_face, ref_face_point).reshape(1, 3)
    J = np.einsum("nj,nc->cj", basis.gradients(x)[0], cmap.node_coords)
    ts = J @ (b - a)
    tt = J @ (c - a)
    G = np.array([[ts @ ts, ts @ tt], [tt @ ts, tt @ tt]])
    return float(np.sqrt(np.linalg.det(G)) / (2.0 * REF_FACE_AREAS[local_face]))


@dataclass
class BoundsReport:
    max_jacobian_deviation: float
    min_det: float
    max_det_ratio: float
    max_second_derivative: float
    mesh_size: float
    violations: list

    def as_dict(self):
        return dict(self.__dict__)


def verify_jacobian_bounds(cmesh, quad_degree=None):
    """Deviation of curved Jacobians from the straight (affine) ones.

    The straight map of an element is the identity in the spirit of the
    analysis, so ``max_jacobian_deviation`` is max |J_curved J_affine^{-1} - I|
    over sampled points, which vanishes on affine elements.
    """
    from .quadrature import tet_quadrature
    deg = quad_degree or 2 * cmesh.degree + 2
    pts = np.concatenate([tet_quadrature(deg).points, REF_VERTICES])
    elems = np.arange(cmesh.n_elements)
    data = cmesh.evaluate(elems, pts, second=True)
    Ainv = np.linalg.inv(cmesh.affine_J)
    dev = np.einsum("eqij,ejk->eqik", data["J"], Ainv) - np.eye(3)
    devn = np.linalg.norm(dev, ord=2, axis=(-2, -1))
    ratio = data["det"] / cmesh.affine_det[:, None]
    bad = np.flatnonzero((data["det"] <= 0).any(axis=1))
    return BoundsReport(
        max_jacobian_deviation=float(devn.max()),
        min_det=float(data["det"].min()),
        max_det_ratio=float(np.abs(ratio - 1).max()),
        max_second_derivative=float(np.abs(data["d2x"]).max()),
        mesh_size=cmesh.mesh.mesh_size,
        violations=[int(e) for e in bad],
    )

"""Assembly of the symmetric interior-penalty saddle-point system.

Volume terms use the transformed Piola gradient on each curved element; face
terms are assembled by a single traversal of the faces, with the owner side
defining the face normal.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp

from ._poly import REF_VERTICES
from .geometry import REF_FACE_AREAS, REF_FACE_NORMALS
from .quadrature import tet_quadrature, tri_quadrature
from .spaces import (bdm_basis, boundary_normal_moments, impose_zero_normal_trace, iter_chunks,
                     piola_divergence, piola_gradients, piola_values)

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 20.0


@dataclass(frozen=True)
class QuadratureConfig:
    volume_degree: int
    face_degree: int

    @classmethod
    def default(cls, k):
        return cls(2 * k + 2, 2 * k + 2)


def _quad(quad, k):
    if quad is None:
        return QuadratureConfig.default(k)
    if isinstance(quad, int):
        return QuadratureConfig(quad, quad)
    return quad


# ---------------------------------------------------------------------------
# face quadrature

class FaceSide:
    """Trace data of one side of a batch of faces."""

    def __init__(self, elems, ref_points, config, geo, normals, ds):
        self.elems = elems
        self.ref_points = ref_points  # (F, Q, 3)
        self.config = config  # (F,) index into the 24 face embeddings
        self.geo = geo
        self.normals = normals  # (F, Q, 3) outward for this side
        self.ds = ds  # (F, Q) weight * surface measure


_EMBED_CACHE = {}


def _face_embeddings():
    """The 24 (local face, vertex permutation) embeddings of a triangle in the tet."""
    if not _EMBED_CACHE:
        from itertools import permutations
        from ._poly import FACE_VERTICES
        keys = []
        for lf in range(4):
            for perm in permutations(FACE_VERTICES[lf]):
                keys.append((lf, perm))
        _EMBED_CACHE["keys"] = keys
        _EMBED_CACHE["index"] = {k: i for i, k in enumerate(keys)}
    return _EMBED_CACHE


class FaceQuadratureCache:
    """Physical face quadrature shared by both sides of each face.

    Face points are parametrised by barycentrics w.r.t. the face's sorted
    global vertex ids, so the two sides of an interior face see the same
    physical points in the same order.
    """

    def __init__(self, cmesh, faces, degree, second=True):
        mesh = cmesh.mesh
        self.faces = np.asarray(faces)
        self.rule = tri_quadrature(degree)
        st = self.rule.points
        bary = np.column_stack([1.0 - st.sum(axis=1), st])  # (Q, 3)
        emb = _face_embeddings()
        self.h = _face_diameters(cmesh, self.faces)
        self.sides = []
        for s in (0, 1):
            elems = mesh.face_elements[self.faces, s]
            if s == 1 and np.any(elems < 0):
                raise ValueError("side 1 requested for boundary faces")
            lf = mesh.face_local[self.faces, s]
            gverts = mesh.faces[self.faces]  # sorted global ids
            tets = mesh.tets[elems]
            loc = np.argmax(tets[:, None, :] == gverts[:, :, None], axis=2)  # (F, 3)
            config = np.array([emb["index"][(int(a), tuple(int(v) for v in b))]
                               for a, b in zip(lf, loc)], dtype=np.int64)
            ref = np.einsum("qa,fac->fqc", bary, REF_VERTICES[loc])
            geo = cmesh.evaluate(elems, ref, second=second)
            nhat = REF_FACE_NORMALS[lf]  # (F, 3)
            m = np.einsum("fqji,fj->fqi", geo["Jinv"], nhat)
            mn = np.linalg.norm(m, axis=-1)
            normals = m / mn[..., None]
            ds = (self.rule.weights[None, :] * 2.0 * REF_FACE_AREAS[lf][:, None]
                  * geo["det"] * mn)
            self.sides.append(FaceSide(elems, ref, config, geo, normals, ds))
            if s == 0 and np.all(mesh.face_elements[self.faces, 1] < 0):
                break

    @property
    def normals(self):
        return self.sides[0].normals

    @property
    def ds(self):
        return self.sides[0].ds

    @property
    def points(self):
        return self.sides[0].geo["x"]


def _face_diameters(cmesh, faces):
    """Diameter of each physical face, over its curved Lagrange nodes."""
    mesh = cmesh.mesh
    elems = mesh.face_elements[faces, 0]
    lf = mesh.face_local[faces, 0]
    bary = cmesh.basis.multi_index
    out = np.empty(len(faces))
    for f in range(4):
        sel = np.flatnonzero(lf == f)
        if not sel.size:
            continue
        on_face = np.flatnonzero(bary[:, f] == 0)
        pts = cmesh.nodes[elems[sel]][:, on_face]  # (n, m, 3)
        d = np.linalg.norm(pts[:, :, None] - pts[:, None, :], axis=-1)
        out[sel] = d.max(axis=(1, 2))
    return out


class _TraceBasis:
    """Reference BDM values/gradients at face points for the 24 embeddings."""

    def __init__(self, k, rule):
        basis = bdm_basis(k)
        st = rule.points
        bary = np.column_stack([1.0 - st.sum(axis=1), st])
        vals, grads = [], []
        for lf, perm in _face_embeddings()["keys"]:
            ref = bary @ REF_VERTICES[list(perm)]
            vals.append(basis.values(ref))
            grads.append(basis.gradients(ref))
        self.values = np.array(vals)  # (24, Q, nb, 3)
        self.gradients = np.array(grads)


_TRACE_CACHE = {}


def trace_basis(k, rule):
    key = (k, rule.exactness_degree, len(rule))
    if key not in _TRACE_CACHE:
        _TRACE_CACHE[key] = _TraceBasis(k, rule)
    return _TRACE_CACHE[key]


def side_traces(cmesh, dofmap, side, rule, gradients=True):
    """Physical basis traces (F, Q, nb, 3) and gradients on one face side."""
    tb = trace_basis(dofmap.degree, rule)
    vhat = tb.values[side.config]
    vals = piola_values(side.geo, vhat)
    if not gradients:
        return vals, None
    ghat = tb.gradients[side.config]
    grads = piola_gradients(side.geo, vhat, ghat, ~cmesh.is_affine[side.elems])
    return vals, grads


# ---------------------------------------------------------------------------
# sparse accumulation

class _Coo:
    def __init__(self, shape):
        self.shape = shape
        self.rows, self.cols, self.vals = [], [], []

    def add(self, ridx, cidx, block):
        """ridx (n, a), cidx (n, b), block (n, a, b)."""
        n, a = ridx.shape
        b = cidx.shape[1]
        self.rows.append(np.broadcast_to(ridx[:, :, None], (n, a, b)).ravel())
        self.cols.append(np.broadcast_to(cidx[:, None, :], (n, a, b)).ravel())
        self.vals.append(block.ravel())

    def tocsr(self):
        if not self.rows:
            return sp.csr_matrix(self.shape)
        m = sp.coo_matrix((np.concatenate(self.vals),
                           (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=self.shape)
        return m.tocsr()


def _signed(dofmap, elems):
    return dofmap.l2g[elems], dofmap.sign[elems]


# ---------------------------------------------------------------------------
# bilinear forms

def element_gradients(cmesh, dofmap, elems, rule):
    """Physical basis gradients (E, Q, nb, 3, 3) and weights w*det (E, Q)."""
    b = dofmap.basis
    geo = cmesh.evaluate(elems, rule.points, second=True)
    grads = piola_gradients(geo, b.values(rule.points), b.gradients(rule.points),
                            ~cmesh.is_affine[elems])
    return grads, rule.weights * geo["det"], geo


def assemble_a_dg(cmesh, dofmap, alpha=DEFAULT_ALPHA, quad=None, consistency=True,
                  chunk=256, face_terms="single"):
    """Sparse symmetric matrix of the interior-penalty form a_DG.

    ``consistency=False`` drops the two average/jump terms, which with
    ``alpha=1`` gives the Gram matrix of the jump-augmented energy norm.
    ``face_terms="per_element"`` assembles face terms from element boundary
    loops with halved interior contributions (cross-check only).
    """
    if alpha <= 0:
        raise ValueError("penalty alpha must be positive")
    k = dofmap.degree
    q = _quad(quad, k)
    mesh = cmesh.mesh
    n = dofmap.n_velocity
    coo = _Coo((n, n))
    vr = tet_quadrature(q.volume_degree)
    for elems in iter_chunks(mesh.n_elements, chunk):
        G, w, _ = element_gradients(cmesh, dofmap, elems, vr)
        K = np.einsum("eq,eqaij,eqbij->eab", w, G, G, optimize=True)
        l2g, sg = _signed(dofmap, elems)
        coo.add(l2g, l2g, K * sg[:, :, None] * sg[:, None, :])
    if face_terms == "single":
        _face_terms_single(cmesh, dofmap, alpha, q, coo, consistency, chunk)
    elif face_terms == "per_element":
        _face_terms_per_element(cmesh, dofmap, alpha, q, coo, consistency)
    else:
        raise ValueError(f"unknown face_terms {face_terms!r}")
    return coo.tocsr()


def _face_block(jumps, fluxes, ds, h, alpha, consistency):
    """Local face matrix from jump vectors and averaged normal fluxes.

    jumps, fluxes : (F, Q, m, 3); ds : (F, Q); h : (F,)
    """
    M = np.einsum("fq,fqai,fqbi->fab", ds * (alpha / h)[:, None], jumps, jumps, optimize=True)
    if consistency:
        C = np.einsum("fq,fqai,fqbi->fab", ds, jumps, fluxes, optimize=True)
        M -= C + np.transpose(C, (0, 2, 1))
    return M


def _face_terms_single(cmesh, dofmap, alpha, q, coo, consistency, chunk):
    mesh = cmesh.mesh
    rule = tri_quadrature(q.face_degree)
    for faces in iter_chunks(mesh.n_faces, 4 * chunk):
        bnd = mesh.is_boundary_face[faces]
        for group, interior in ((faces[~bnd], True), (faces[bnd], False)):
            if not group.size:
                continue
            cache = FaceQuadratureCache(cmesh, group, q.face_degree)
            p = cache.sides[0]
            V0, G0 = side_traces(cmesh, dofmap, p, rule)
            n0 = p.normals
            F0 = np.einsum("fqbij,fqj->fqbi", G0, n0)
            l0, s0 = _signed(dofmap, p.elems)
            if interior:
                m = cache.sides[1]
                V1, G1 = side_traces(cmesh, dofmap, m, rule)
                F1 = np.einsum("fqbij,fqj->fqbi", G1, n0)
                jumps = np.concatenate([V0, -V1], axis=2)
                fluxes = 0.5 * np.concatenate([F0, F1], axis=2)
                l1, s1 = _signed(dofmap, m.elems)
                idx = np.concatenate([l0, l1], axis=1)
                sg = np.concatenate([s0, s1], axis=1)
            else:
                jumps, fluxes, idx, sg = V0, F0, l0, s0
            M = _face_block(jumps, fluxes, p.ds, cache.h, alpha, consistency)
            coo.add(idx, idx, M * sg[:, :, None] * sg[:, None, :])


def _face_terms_per_element(cmesh, dofmap, alpha, q, coo, consistency):
    """Face terms via per-element boundary loops (each interior face visited twice)."""
    mesh = cmesh.mesh
    rule = tri_quadrature(q.face_degree)
    bnd = mesh.is_boundary_face
    for e in range(mesh.n_elements):
        for lf in range(4):
            f = mesh.element_faces[e, lf]
            if bnd[f]:
                sub = FaceQuadratureCache(cmesh, np.array([f]), q.face_degree)
                p = sub.sides[0]
                V, G = side_traces(cmesh, dofmap, p, rule)
                Fl = np.einsum("fqbij,fqj->fqbi", G, p.normals)
                M = _face_block(V, Fl, p.ds, sub.h, alpha, consistency)
                l, sg = _signed(dofmap, p.elems)
                coo.add(l, l, M * sg[:, :, None] * sg[:, None, :])
                continue
            sub = FaceQuadratureCache(cmesh, np.array([f]), q.face_degree)
            sides = sub.sides
            V0, G0 = side_traces(cmesh, dofmap, sides[0], rule)
            V1, G1 = side_traces(cmesh, dofmap, sides[1], rule)
            n0 = sides[0].normals
            jumps = np.concatenate([V0, -V1], axis=2)
            fluxes = 0.5 * np.concatenate([np.einsum("fqbij,fqj->fqbi", G0, n0),
                                           np.einsum("fqbij,fqj->fqbi", G1, n0)], axis=2)
            M = 0.5 * _face_block(jumps, fluxes, sides[0].ds, sub.h, alpha, consistency)
            l0, s0 = _signed(dofmap, sides[0].elems)
            l1, s1 = _signed(dofmap, sides[1].elems)
            idx = np.concatenate([l0, l1], axis=1)
            sg = np.concatenate([s0, s1], axis=1)
            coo.add(idx, idx, M * sg[:, :, None] * sg[:, None, :])


def assemble_energy_gram(cmesh, dofmap, quad=None):
    """Gram matrix of ||v||^2 = ||grad_h v||^2 + sum_F h_F^{-1} ||[[v]]||_F^2."""
    return assemble_a_dg(cmesh, dofmap, alpha=1.0, quad=quad, consistency=False)


def assemble_div(cmesh, dofmap, quad=None, chunk=1024):
    """B[i, j] = (div phi_j, psi_i) over Omega_h."""
    k = dofmap.degree
    q = _quad(quad, k)
    rule = tet_quadrature(q.volume_degree)
    b = dofmap.basis
    divhat = b.divergence(rule.points)  # (Q, nb)
    psi = dofmap.pbasis.values(rule.points)  # (Q, np)
    coo = _Coo((dofmap.n_pressure, dofmap.n_velocity))
    for elems in iter_chunks(cmesh.n_elements, chunk):
        geo = cmesh.evaluate(elems, rule.points, second=False)
        div = piola_divergence(geo, divhat)  # (E, Q, nb)
        w = rule.weights * geo["det"]
        blk = np.einsum("eq,qa,eqb->eab", w, psi, div)
        l2g, sg = _signed(dofmap, elems)
        coo.add(dofmap.p_l2g[elems], l2g, blk * sg[:, None, :])
    return coo.tocsr()


def assemble_pressure_mass(cmesh, dofmap, quad=None, chunk=1024):
    """Block-diagonal pressure mass matrix over Omega_h."""
    k = dofmap.degree
    q = _quad(quad, k)
    rule = tet_quadrature(q.volume_degree)
    psi = dofmap.pbasis.values(rule.points)
    coo = _Coo((dofmap.n_pressure, dofmap.n_pressure))
    for elems in iter_chunks(cmesh.n_elements, chunk):
        geo = cmesh.evaluate(elems, rule.points, second=False)
        w = rule.weights * geo["det"]
        blk = np.einsum("eq,qa,qb->eab", w, psi, psi)
        idx = dofmap.p_l2g[elems]
        coo.add(idx, idx, blk)
    return coo.tocsr()


def assemble_velocity_mass(cmesh, dofmap, quad=None, chunk=512):
    k = dofmap.degree
    q = _quad(quad, k)
    rule = tet_quadrature(q.volume_degree)
    vhat = dofmap.basis.values(rule.points)
    coo = _Coo((dofmap.n_velocity, dofmap.n_velocity))
    for elems in iter_chunks(cmesh.n_elements, chunk):
        geo = cmesh.evaluate(elems, rule.points, second=False)
        V = piola_values(geo, vhat)
        w = rule.weights * geo["det"]
        blk = np.einsum("eq,eqai,eqbi->eab", w, V, V)
        l2g, sg = _signed(dofmap, elems)
        coo.add(l2g, l2g, blk * sg[:, :, None] * sg[:, None, :])
    return coo.tocsr()


# ---------------------------------------------------------------------------
# right-hand sides

def exact_map_points(cmesh, elems, ref_points):
    """Points M(x_hat) of a blended exact map, for the pullback source f o Phi_h^{-1}.

    On elements touching the curved boundary the curved image M_h(x_hat) is
    corrected by lambda^(k+1) times the projection defect of the closest
    point of the boundary face (or edge), so M maps boundary faces exactly
    onto the sphere and coincides with M_h elsewhere.
    """
    x = cmesh.points(elems, ref_points)
    geom = cmesh.geometry
    if geom.kind == "identity":
        return x
    mesh = cmesh.mesh
    ref_points = np.asarray(ref_points, dtype=float)
    lam = np.column_stack([1.0 - ref_points.sum(axis=1), ref_points])  # (Q, 4)
    curved_v = geom.curved_mask(mesh.vertices)
    k = cmesh.degree
    for i, e in enumerate(elems):
        if cmesh.is_affine[e]:
            continue
        on = curved_v[mesh.tets[e]]
        if on.sum() < 2:
            continue
        ids = np.flatnonzero(on)
        lsum = lam[:, ids].sum(axis=1)
        ok = lsum > 1e-14
        y = np.zeros_like(ref_points)
        y[ok] = (lam[ok][:, ids] @ REF_VERTICES[ids]) / lsum[ok, None]
        my = cmesh.points(np.array([e]), y)[0]
        defect = geom.project(my) - my
        x[i] += (lsum ** (k + 1))[:, None] * np.where(ok[:, None], defect, 0.0)
    return x


def assemble_rhs(f, cmesh, dofmap, mode="direct", quad=None, chunk=512):
    """Load vector (f_h, phi_i) over Omega_h.

    ``mode="direct"`` evaluates f at the physical quadrature points;
    ``mode="pullback"`` evaluates f at the blended exact-map images instead.
    """
    if mode not in ("direct", "pullback"):
        raise ValueError(f"unknown rhs mode {mode!r}")
    k = dofmap.degree
    q = _quad(quad, k)
    rule = tet_quadrature(q.volume_degree)
    vhat = dofmap.basis.values(rule.points)
    out = np.zeros(dofmap.n_velocity)
    for elems in iter_chunks(cmesh.n_elements, chunk):
        geo = cmesh.evaluate(elems, rule.points, second=False)
        pts = geo["x"] if mode == "direct" else exact_map_points(cmesh, elems, rule.points)
        fv = f(pts)
        V = piola_values(geo, vhat)
        w = rule.weights * geo["det"]
        loc = np.einsum("eq,eqi,eqbi->eb", w, fv, V)
        l2g, sg = _signed(dofmap, elems)
        np.add.at(out, l2g, loc * sg)
    return out


def assemble_boundary_lift(g, cmesh, dofmap, alpha=DEFAULT_ALPHA, quad=None):
    """Nitsche lift of Dirichlet data g on the velocity right-hand side.

    Returns sum over boundary faces of
    -int {grad v}:(g (x) n) + (alpha/h_F) int (g (x) n):[[v]] for each basis v.
    """
    k = dofmap.degree
    q = _quad(quad, k)
    mesh = cmesh.mesh
    out = np.zeros(dofmap.n_velocity)
    bf = mesh.boundary_faces
    if not bf.size:
        return out
    rule = tri_quadrature(q.face_degree)
    for faces in iter_chunks(len(bf), 2048):
        cache = FaceQuadratureCache(cmesh, bf[faces], q.face_degree)
        p = cache.sides[0]
        V, G = side_traces(cmesh, dofmap, p, rule)
        gv = g(p.geo["x"])
        flux = np.einsum("fqbij,fqj->fqbi", G, p.normals)
        loc = (-np.einsum("fq,fqi,fqbi->fb", p.ds, gv, flux)
               + np.einsum("fq,fqi,fqbi->fb", p.ds * (alpha / cache.h)[:, None], gv, V))
        l2g, sg = _signed(dofmap, p.elems)
        np.add.at(out, l2g, loc * sg)
    return out


# ---------------------------------------------------------------------------
# full system

@dataclass
class BlockSystem:
    """Stokes saddle-point system before constraint elimination.

    A = nu * a_DG and B = -(div u, q), so the unknown is the physical
    pressure; strong boundary normal moments are kept in ``constraints`` and
    eliminated by the solver.
    """
    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs_velocity: np.ndarray
    rhs_pressure: np.ndarray
    penalty: float
    viscosity: float
    constraints: object
    dofmap: object = None
    cmesh: object = None
    pressure_mass: sp.csr_matrix = None
    info: dict = field(default_factory=dict)

    @property
    def n_velocity(self):
        return self.A.shape[0]

    @property
    def n_pressure(self):
        return self.B.shape[0]

    def reduced(self):
        """Constrained blocks (A_ff, B_f, rhs_f, rhs_p) after symmetric elimination."""
        c = self.constraints
        free, fixed, gval = c.free, c.fixed, c.fixed_values
        A = self.A
        Aff = A[free][:, free].tocsr()
        Bf = self.B[:, free].tocsr()
        rf = self.rhs_velocity[free] - A[free][:, fixed] @ gval
        rp = self.rhs_pressure - self.B[:, fixed] @ gval
        return Aff, Bf, rf, rp


def assemble_stokes(cmesh, dofmap, f=None, g=None, alpha=DEFAULT_ALPHA, nu=1.0,
                    rhs_mode="direct", quad=None):
    """Assemble the constrained Stokes system for source f and Dirichlet data g."""
    A = assemble_a_dg(cmesh, dofmap, alpha, quad)
    B = -assemble_div(cmesh, dofmap, quad)
    rhs_v = np.zeros(dofmap.n_velocity)
    if f is not None:
        rhs_v += assemble_rhs(f, cmesh, dofmap, rhs_mode, quad)
    if g is not None:
        rhs_v += nu * assemble_boundary_lift(g, cmesh, dofmap, alpha, quad)
        qdeg = _quad(quad, dofmap.degree).face_degree
        values = boundary_normal_moments(g, cmesh, dofmap, qdeg)
    else:
        values = None
    cons = impose_zero_normal_trace(dofmap, values)
    return BlockSystem(nu * A, B, rhs_v, np.zeros(dofmap.n_pressure), alpha, nu, cons,
                       dofmap, cmesh, assemble_pressure_mass(cmesh, dofmap, quad))


# ---------------------------------------------------------------------------
# lifting operator

class LiftingWorkspace:
    """Per-element Gram matrices of S_h(K) = span{grad phi_i} and their pseudo-inverses."""

    def __init__(self, cmesh, dofmap, quad=None, rcond=1e-10):
        k = dofmap.degree
        self.cmesh = cmesh
        self.dofmap = dofmap
        self.quad = _quad(quad, k)
        rule = tet_quadrature(self.quad.volume_degree)
        grams = []
        for elems in iter_chunks(cmesh.n_elements, 256):
            G, w, _ = element_gradients(cmesh, dofmap, elems, rule)
            grams.append(np.einsum("eq,eqaij,eqbij->eab", w, G, G, optimize=True))
        self.gram = np.concatenate(grams)
        self.pinv = np.linalg.pinv(self.gram, rcond=rcond, hermitian=True)
        self.rank = np.linalg.matrix_rank(self.gram, rtol=rcond, hermitian=True)


def _jump_data(cmesh, dofmap, face, w, rule_degree):
    """Per-side (element, jump values (Q,3), normal (Q,3), ds, avg weight) on one face."""
    mesh = cmesh.mesh
    cache = FaceQuadratureCache(cmesh, np.array([face]), rule_degree)
    rule = cache.rule
    sides = cache.sides
    n0 = sides[0].normals[0]
    if callable(w):
        vals = [w(s.geo["x"])[0] for s in sides]
    else:
        vals = []
        for s in sides:
            V, _ = side_traces(cmesh, dofmap, s, rule, gradients=False)
            c = w[dofmap.l2g[s.elems[0]]] * dofmap.sign[s.elems[0]]
            vals.append(np.einsum("b,qbi->qi", c, V[0]))
    jump = vals[0] - vals[1] if len(sides) == 2 else vals[0]
    interior = not mesh.is_boundary_face[face]
    return cache, jump, n0, interior


def lifting_apply(w, face, workspace):
    """L_F(w) as local gradient-span coefficients on the elements adjacent to F.

    ``w`` is either a global velocity coefficient vector or a callable of
    physical points (evaluated from both sides). Returns ``{element: coeffs}``;
    the lifted field on K is sum_i c_i grad phi_i.
    """
    cmesh, dofmap = workspace.cmesh, workspace.dofmap
    cache, jump, n0, interior = _jump_data(cmesh, dofmap, face, w, workspace.quad.face_degree)
    rule = cache.rule
    out = {}
    avg = 0.5 if interior else 1.0
    for s in cache.sides:
        _, G = side_traces(cmesh, dofmap, s, rule)
        # int_F [[w]] : {grad phi_i} = avg * int_F jump . (grad phi_i n0)
        b = avg * np.einsum("q,qi,qbij,qj->b", cache.ds[0], jump, G[0], n0)
        e = int(s.elems[0])
        out[e] = workspace.pinv[e] @ b
    return out


def lifting_norm(lifted, workspace):
    return float(np.sqrt(sum(c @ workspace.gram[e] @ c for e, c in lifted.items())))


def jump_norm(w, face, workspace):
    cache, jump, _, _ = _jump_data(workspace.cmesh, workspace.dofmap, face, w,
                                   workspace.quad.face_degree)
    return float(np.sqrt(np.einsum("q,qi,qi->", cache.ds[0], jump, jump)))


def lifting_global(velocity, workspace):
    """L_h(v) = sum_F L_F(v) as local coefficients (ne, nb)."""
    mesh = workspace.cmesh.mesh
    out = np.zeros((mesh.n_elements, workspace.dofmap.basis.shape_count))
    for f in range(mesh.n_faces):
        for e, c in lifting_apply(velocity, f, workspace).items():
            out[e] += c
    return out


def a_dg_via_lifting(u, v, workspace, alpha=DEFAULT_ALPHA):
    """A_DG(u, v) = (grad u, grad v) - (grad u, L(v)) - (grad v, L(u)) + penalty."""
    dofmap = workspace.dofmap
    cu = u[dofmap.l2g] * dofmap.sign
    cv = v[dofmap.l2g] * dofmap.sign
    Lu = lifting_global(u, workspace)
    Lv = lifting_global(v, workspace)
    G = workspace.gram
    vol = np.einsum("ea,eab,eb->", cu, G, cv)
    cross = np.einsum("ea,eab,eb->", cu, G, Lv) + np.einsum("ea,eab,eb->", cv, G, Lu)
    pen = penalty_form(u, v, workspace.cmesh, dofmap, alpha, workspace.quad)
    return vol - cross + pen


def penalty_form(u, v, cmesh, dofmap, alpha, quad=None):
    """alpha * sum_F h_F^{-1} int_F [[u]]:[[v]]."""
    k = dofmap.degree
    q = _quad(quad, k)
    mesh = cmesh.mesh
    rule = tri_quadrature(q.face_degree)
    total = 0.0
    for faces in iter_chunks(mesh.n_faces, 1024):
        bnd = mesh.is_boundary_face[faces]
        for group, interior in ((faces[~bnd], True), (faces[bnd], False)):
            if not group.size:
                continue
            cache = FaceQuadratureCache(cmesh, group, q.face_degree, second=False)
            jumps = []
            for vec in (u, v):
                s0 = cache.sides[0]
                V0, _ = side_traces(cmesh, dofmap, s0, rule, gradients=False)
                c0 = vec[dofmap.l2g[s0.elems]] * dofmap.sign[s0.elems]
                j = np.einsum("fb,fqbi->fqi", c0, V0)
                if interior:
                    s1 = cache.sides[1]
                    V1, _ = side_traces(cmesh, dofmap, s1, rule, gradients=False)
                    c1 = vec[dofmap.l2g[s1.elems]] * dofmap.sign[s1.elems]
                    j = j - np.einsum("fb,fqbi->fqi", c1, V1)
                jumps.append(j)
            total += float(np.einsum("fq,fqi,fqi->", cache.ds * (alpha / cache.h)[:, None],
                                     jumps[0], jumps[1]))
    return total


# ---------------------------------------------------------------------------
# export

def export_matrix_market(path, matrix):
    import scipy.io
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix))

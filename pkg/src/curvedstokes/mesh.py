"""Straight body-fitted tetrahedral meshes: topology, I/O, generators, refinement."""
from dataclasses import dataclass, field
from itertools import permutations, product
import logging

import numpy as np

from ._poly import FACE_VERTICES
from .geometry import ExactGeometry

logger = logging.getLogger(__name__)

SHAPE_REGULARITY_FLOOR = 0.05
BOUNDARY_TOL = 1e-12


class MeshParseError(ValueError):
    pass


class MeshTopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Vertex:
    coordinates: np.ndarray
    on_boundary: bool


@dataclass(frozen=True)
class Tetrahedron:
    vertex_ids: tuple
    boundary_vertex_count: int


@dataclass(frozen=True)
class FaceRecord:
    vertex_ids: tuple
    adjacent_tets: tuple  # ((element, local_face), ...) owner first
    kind: str
    diameter: float

    @property
    def orientation_owner(self):
        return self.adjacent_tets[0][0]


@dataclass
class DiagnosticsReport:
    conformity: list = field(default_factory=list)
    orientation: list = field(default_factory=list)
    boundary_vertex_count: list = field(default_factory=list)
    shape_regularity: list = field(default_factory=list)

    def __bool__(self):
        return any((self.conformity, self.orientation,
                    self.boundary_vertex_count, self.shape_regularity))

    @property
    def is_empty(self):
        return not bool(self)

    def as_dict(self):
        return {"conformity": self.conformity, "orientation": self.orientation,
                "boundary_vertex_count": self.boundary_vertex_count,
                "shape_regularity": self.shape_regularity}


def signed_volumes(vertices, tets):
    p = vertices[tets]
    d = p[:, 1:] - p[:, :1]
    return np.linalg.det(d) / 6.0


def _edges_of(tets):
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    e = np.concatenate([tets[:, [a, b]] for a, b in pairs])
    return np.sort(e, axis=1)


def shape_ratios(vertices, tets):
    """Inradius / diameter of each tetrahedron."""
    p = vertices[tets]
    vol = np.abs(signed_volumes(vertices, tets))
    area = np.zeros(len(tets))
    for f in FACE_VERTICES:
        a, b, c = p[:, f[0]], p[:, f[1]], p[:, f[2]]
        area += 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    inradius = 3.0 * vol / area
    diam = np.zeros(len(tets))
    for i in range(4):
        for j in range(i + 1, 4):
            diam = np.maximum(diam, np.linalg.norm(p[:, i] - p[:, j], axis=1))
    return inradius / diam


class StraightMesh:
    """Conforming straight tetrahedral mesh with its face topology.

    Parameters
    ----------
    vertices : (nv, 3) array
    tets : (ne, 4) int array, positively oriented
    boundary_geometry : ExactGeometry, optional
        Exact boundary used to project new boundary vertices on refinement.
    check : bool
        Raise :class:`MeshTopologyError` on inverted or non-conforming input.
    """

    def __init__(self, vertices, tets, boundary_geometry=None, check=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        self.boundary_geometry = boundary_geometry or ExactGeometry("identity")
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise MeshTopologyError("tets must have shape (n, 4)")
        if len(self.tets) and (self.tets.min() < 0 or self.tets.max() >= len(self.vertices)):
            raise MeshTopologyError("tet references a missing vertex")
        self._build_faces()
        if check:
            vol = signed_volumes(self.vertices, self.tets)
            bad = np.flatnonzero(vol <= 0)
            if bad.size:
                raise MeshTopologyError(f"inverted or degenerate tetrahedra: {bad[:10].tolist()}")
        for arr in (self.vertices, self.tets):
            arr.setflags(write=False)

    def _build_faces(self):
        ne = len(self.tets)
        local = self.tets[:, FACE_VERTICES]  # (ne, 4, 3)
        keys = np.sort(local.reshape(-1, 3), axis=1)
        faces, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                           return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            bad = np.flatnonzero(counts > 2)
            raise MeshTopologyError(f"faces shared by more than two tets: {faces[bad[:5]].tolist()}")
        # stable order: first occurrence (lowest element id) owns the face
        order = np.argsort(inverse, kind="stable")
        elem = order // 4
        lface = order % 4
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        nf = len(faces)
        face_elements = -np.ones((nf, 2), dtype=np.int64)
        face_local = -np.ones((nf, 2), dtype=np.int64)
        face_elements[:, 0] = elem[starts]
        face_local[:, 0] = lface[starts]
        two = counts == 2
        face_elements[two, 1] = elem[starts[two] + 1]
        face_local[two, 1] = lface[starts[two] + 1]
        # renumber faces by owner, for deterministic cache-friendly ordering
        perm = np.lexsort((face_local[:, 0], face_elements[:, 0]))
        self.faces = faces[perm]
        self.face_elements = face_elements[perm]
        self.face_local = face_local[perm]
        rank = np.empty(nf, dtype=np.int64)
        rank[perm] = np.arange(nf)
        self.element_faces = rank[inverse].reshape(ne, 4)
        self.is_boundary_face = self.face_elements[:, 1] < 0
        on_b = np.zeros(len(self.vertices), dtype=bool)
        on_b[self.faces[self.is_boundary_face].ravel()] = True
        self.on_boundary = on_b
        for arr in (self.faces, self.face_elements, self.face_local, self.element_faces,
                    self.is_boundary_face, self.on_boundary):
            arr.setflags(write=False)

    # -- sizes ---------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.tets)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def boundary_faces(self):
        return np.flatnonzero(self.is_boundary_face)

    @property
    def interior_faces(self):
        return np.flatnonzero(~self.is_boundary_face)

    def element_diameters(self):
        p = self.vertices[self.tets]
        d = np.zeros(len(self.tets))
        for i in range(4):
            for j in range(i + 1, 4):
                d = np.maximum(d, np.linalg.norm(p[:, i] - p[:, j], axis=1))
        return d

    @property
    def mesh_size(self):
        return float(self.element_diameters().max())

    def face_diameters(self):
        p = self.vertices[self.faces]
        return np.max([np.linalg.norm(p[:, i] - p[:, j], axis=1)
                       for i, j in ((0, 1), (0, 2), (1, 2))], axis=0)

    def boundary_vertex_counts(self):
        return self.on_boundary[self.tets].sum(axis=1)

    def volumes(self):
        return signed_volumes(self.vertices, self.tets)

    # -- record views ----------------------------------------------------
    def vertex(self, i):
        return Vertex(self.vertices[i].copy(), bool(self.on_boundary[i]))

    def tetrahedron(self, e):
        return Tetrahedron(tuple(int(v) for v in self.tets[e]),
                           int(self.on_boundary[self.tets[e]].sum()))

    def face(self, f):
        adj = [(int(self.face_elements[f, s]), int(self.face_local[f, s]))
               for s in range(2) if self.face_elements[f, s] >= 0]
        return FaceRecord(tuple(int(v) for v in self.faces[f]), tuple(adj),
                          "boundary" if self.is_boundary_face[f] else "interior",
                          float(self.face_diameters()[f]))

    def __repr__(self):
        return (f"StraightMesh(vertices={self.n_vertices}, tets={self.n_elements}, "
                f"faces={self.n_faces}, h={self.mesh_size:.4g})")


# ---------------------------------------------------------------------------
# validation

def validate_topology(mesh, shape_floor=SHAPE_REGULARITY_FLOOR):
    """Collect conformity, orientation, boundary-count and shape violations."""
    rep = DiagnosticsReport()
    vol = mesh.volumes()
    for e in np.flatnonzero(vol <= 0):
        rep.orientation.append({"tet": int(e), "signed_volume": float(vol[e])})
    # every face is shared by at most two tets by construction; a conforming
    # mesh additionally has a closed boundary: each boundary edge in exactly
    # two boundary faces
    bf = mesh.faces[mesh.is_boundary_face]
    if len(bf):
        edges = np.sort(np.concatenate([bf[:, [0, 1]], bf[:, [0, 2]], bf[:, [1, 2]]]), axis=1)
        uniq, cnt = np.unique(edges, axis=0, return_counts=True)
        for e in uniq[cnt != 2]:
            rep.conformity.append({"open_boundary_edge": e.tolist()})
    counts = mesh.boundary_vertex_counts()
    for e in np.flatnonzero(counts > 3):
        rep.boundary_vertex_count.append({"tet": int(e), "count": int(counts[e])})
    ratios = shape_ratios(mesh.vertices, mesh.tets)
    for e in np.flatnonzero(ratios < shape_floor):
        rep.shape_regularity.append({"tet": int(e), "ratio": float(ratios[e])})
    return rep


# ---------------------------------------------------------------------------
# I/O

def _geometry_from_tokens(tok, lineno):
    kind = tok[1]
    if kind not in ("sphere", "cube_minus_sphere"):
        raise MeshParseError(f"line {lineno}: unknown boundary_geometry {kind!r}")
    try:
        cx, cy, cz, r = (float(t) for t in tok[2:6])
    except ValueError as exc:
        raise MeshParseError(f"line {lineno}: bad boundary_geometry parameters") from exc
    return ExactGeometry(kind, (cx, cy, cz), r)


def read_tetmesh(path):
    with open(path) as fh:
        lines = [(i + 1, ln.split()) for i, ln in enumerate(fh)]
    lines = [(i, t) for i, t in lines if t and not t[0].startswith("#")]
    if not lines or lines[0][1][:2] != ["tetmesh", "1"]:
        raise MeshParseError("line 1: expected header 'tetmesh 1'")
    pos = 1
    vertices = tets = None
    geometry = None

    def take_block(count, width, kind, dtype):
        nonlocal pos
        rows = []
        for _ in range(count):
            if pos >= len(lines):
                raise MeshParseError(f"unexpected end of file while reading {kind}")
            lineno, tok = lines[pos]
            if len(tok) != width:
                raise MeshParseError(f"line {lineno}: expected {width} values in {kind} block")
            try:
                rows.append([dtype(t) for t in tok])
            except ValueError as exc:
                raise MeshParseError(f"line {lineno}: {exc}") from exc
            pos += 1
        return rows

    while pos < len(lines):
        lineno, tok = lines[pos]
        pos += 1
        if tok[0] == "vertices" and len(tok) == 2:
            vertices = np.array(take_block(int(tok[1]), 3, "vertices", float)).reshape(-1, 3)
        elif tok[0] == "tets" and len(tok) == 2:
            tets = np.array(take_block(int(tok[1]), 4, "tets", int)).reshape(-1, 4)
        elif tok[0] == "boundary_geometry" and len(tok) == 6:
            geometry = _geometry_from_tokens(tok, lineno)
        else:
            raise MeshParseError(f"line {lineno}: unexpected section {' '.join(tok)!r}")
    if vertices is None or tets is None:
        raise MeshParseError("missing 'vertices' or 'tets' section")
    if not np.all(np.isfinite(vertices)):
        raise MeshParseError("non-finite vertex coordinates")
    return vertices, tets, geometry


def read_gmsh22(path):
    """Nodes and 4-node tetrahedra (element type 4) of an ASCII MSH 2.2 file."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    it = iter(enumerate(lines, start=1))
    nodes = {}
    tets = []
    fmt_seen = False
    for lineno, ln in it:
        s = ln.strip()
        if s == "$MeshFormat":
            lineno, ln = next(it)
            if not ln.split() or not ln.split()[0].startswith("2"):
                raise MeshParseError(f"line {lineno}: only MSH 2.x is supported")
            if ln.split()[1] != "0":
                raise MeshParseError(f"line {lineno}: binary MSH is not supported")
            fmt_seen = True
        elif s == "$Nodes":
            lineno, ln = next(it)
            for _ in range(int(ln)):
                lineno, ln = next(it)
                tok = ln.split()
                if len(tok) < 4:
                    raise MeshParseError(f"line {lineno}: malformed node")
                nodes[int(tok[0])] = [float(t) for t in tok[1:4]]
        elif s == "$Elements":
            lineno, ln = next(it)
            for _ in range(int(ln)):
                lineno, ln = next(it)
                tok = [int(t) for t in ln.split()]
                if len(tok) < 3:
                    raise MeshParseError(f"line {lineno}: malformed element")
                if tok[1] == 4:
                    ntags = tok[2]
                    tets.append(tok[3 + ntags:7 + ntags])
    if not fmt_seen:
        raise MeshParseError("missing $MeshFormat section")
    ids = sorted(nodes)
    index = {nid: i for i, nid in enumerate(ids)}
    vertices = np.array([nodes[i] for i in ids], dtype=float).reshape(-1, 3)
    try:
        tets = np.array([[index[n] for n in t] for t in tets], dtype=np.int64).reshape(-1, 4)
    except KeyError as exc:
        raise MeshParseError(f"element references unknown node {exc}") from exc
    return vertices, tets, None


def load_mesh(path, format="tetmesh", boundary_geometry=None, reorient=False):
    """Read a mesh file and build its topology.

    ``format`` is ``"tetmesh"`` (the native line-oriented format) or
    ``"gmsh"`` (ASCII MSH 2.2, tetrahedra only). Gmsh files carry no
    orientation guarantee, so ``reorient=True`` swaps two vertices of
    negatively oriented tets instead of rejecting them.
    """
    if format == "tetmesh":
        vertices, tets, geometry = read_tetmesh(path)
    elif format in ("gmsh", "msh"):
        vertices, tets, geometry = read_gmsh22(path)
    else:
        raise ValueError(f"unknown mesh format {format!r}")
    geometry = boundary_geometry or geometry
    if reorient:
        neg = signed_volumes(vertices, tets) < 0
        tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    return StraightMesh(vertices, tets, geometry)


def write_tetmesh(mesh, path):
    with open(path, "w") as fh:
        fh.write("tetmesh 1\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x in mesh.vertices:
            fh.write(f"{x[0]:.17g} {x[1]:.17g} {x[2]:.17g}\n")
        fh.write(f"tets {mesh.n_elements}\n")
        for t in mesh.tets:
            fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")
        g = mesh.boundary_geometry
        if g.kind != "identity":
            c = g.center
            fh.write(f"boundary_geometry {g.kind} {c[0]:.17g} {c[1]:.17g} {c[2]:.17g} {g.radius:.17g}\n")


# ---------------------------------------------------------------------------
# refinement

def _orient(vertices, tets):
    neg = signed_volumes(vertices, tets) < 0
    tets = tets.copy()
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    return tets


def uniform_refine(mesh):
    """Red 1:8 refinement with projection of new curved-boundary vertices.

    The octahedron of each tet is cut along its shortest diagonal among those
    with at least one endpoint off the boundary, so children keep at most
    three boundary vertices.
    """
    tets = mesh.tets
    nv = mesh.n_vertices
    edges = _edges_of(tets)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.ravel().reshape(6, -1).T  # (ne, 6): 01 02 03 12 13 23
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])

    bf = mesh.faces[mesh.is_boundary_face]
    bedges = np.unique(np.sort(np.concatenate([bf[:, [0, 1]], bf[:, [0, 2]], bf[:, [1, 2]]]), axis=1), axis=0)
    geom = mesh.boundary_geometry
    is_bedge = np.zeros(len(uniq), dtype=bool)
    if len(bedges):
        key = uniq[:, 0] * nv + uniq[:, 1]
        is_bedge = np.isin(key, bedges[:, 0] * nv + bedges[:, 1])
    if geom.kind != "identity" and is_bedge.any():
        cand = np.flatnonzero(is_bedge)
        ends_curved = (geom.curved_mask(mesh.vertices[uniq[cand, 0]])
                       & geom.curved_mask(mesh.vertices[uniq[cand, 1]]))
        # an edge joining two sphere vertices that lies on a flat face cannot
        # occur for the supported geometries, so both-ends-curved suffices
        sel = cand[ends_curved]
        mids[sel] = geom.project(mids[sel])

    vertices = np.concatenate([mesh.vertices, mids])
    on_b = np.concatenate([mesh.on_boundary, is_bedge])
    m = inv + nv
    v0, v1, v2, v3 = tets.T
    m01, m02, m03, m12, m13, m23 = m.T
    corners = [np.stack(c, axis=1) for c in (
        (v0, m01, m02, m03), (m01, v1, m12, m13), (m02, m12, v2, m23), (m03, m13, m23, v3))]
    # candidate diagonals and the equator cycle around each
    diag_sets = [
        ((m01, m23), (m02, m12, m13, m03)),
        ((m02, m13), (m01, m12, m23, m03)),
        ((m03, m12), (m01, m02, m23, m13)),
    ]
    lengths = []
    for (a, b), _ in diag_sets:
        ln = np.linalg.norm(vertices[a] - vertices[b], axis=1)
        ln = np.where(on_b[a] & on_b[b], np.inf, ln)
        lengths.append(ln)
    choice = np.argmin(np.stack(lengths, axis=1), axis=1)
    octa = []
    for k in range(4):
        cols = []
        for d, ((a, b), eq) in enumerate(diag_sets):
            cols.append(np.stack((a, b, eq[k], eq[(k + 1) % 4]), axis=1))
        stacked = np.stack(cols, axis=0)  # (3, ne, 4)
        octa.append(stacked[choice, np.arange(len(tets))])
    children = np.stack(corners + octa, axis=1).reshape(-1, 4)
    children = _orient(vertices, children)
    return StraightMesh(vertices, children, geom)


# ---------------------------------------------------------------------------
# generators

def _kuhn_cube_tets(corner_index):
    """Six Kuhn tets of a unit cube; corner_index maps (i, j, k) bits to ids."""
    out = []
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        p = [0, 0, 0]
        path = [corner_index(tuple(p))]
        for axis in perm:
            p[axis] = 1
            path.append(corner_index(tuple(p)))
        out.append(path)
    return out


def ball_seed_mesh(radius=1.0, center=(0.0, 0.0, 0.0)):
    """48-tet ball seed: a 2x2x2 Kuhn-split cube mapped radially onto the ball.

    Every Kuhn diagonal runs from the centre vertex to an outer corner, so each
    tet contains the single interior vertex and has three boundary vertices.
    """
    coords = {}
    pts = []
    for ijk in product((-1, 0, 1), repeat=3):
        coords[ijk] = len(pts)
        pts.append(ijk)
    pts = np.array(pts, dtype=float)
    tets = []
    for signs in product((-1, 1), repeat=3):
        def corner(bits, signs=signs):
            return coords[tuple(s * b for s, b in zip(signs, bits))]
        tets.extend(_kuhn_cube_tets(corner))
    tets = np.array(tets, dtype=np.int64)
    nrm = np.linalg.norm(pts, axis=1)
    outer = nrm > 0
    pts[outer] = pts[outer] / nrm[outer, None]
    pts = radius * pts + np.asarray(center, dtype=float)
    tets = _orient(pts, tets)
    geom = ExactGeometry("sphere", tuple(float(c) for c in center), float(radius))
    return StraightMesh(pts, tets, geom)


def generate_ball_mesh(radius=1.0, level=0, center=(0.0, 0.0, 0.0)):
    """Body-fitted mesh of the ball; level L has 48 * 8**L tets."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if level < 0:
        raise ValueError("level must be non-negative")
    mesh = ball_seed_mesh(radius, center)
    for _ in range(level):
        mesh = uniform_refine(mesh)
    return mesh


def _cavity_resolution(target_tets):
    # even n puts a grid line through the ball centre plane z = c_z, so the
    # mid-plane is a union of mesh faces
    best = None
    for n in range(2, 60, 2):
        m = max(1, int(round(target_tets / (36.0 * n * n))))
        count = 36 * n * n * m
        score = abs(np.log(count / target_tets)) + 0.3 * abs(np.log(m / (0.57 * n)))
        if best is None or score < best[0]:
            best = (score, n, m)
    return best[1], best[2]


def generate_cavity_mesh(ball_center=(0.5, 0.5, 0.5), ball_radius=0.25, target_tets=27889,
                         resolution=None):
    """Body-fitted mesh of (0,1)^3 minus a ball, built from a shell of hexes.

    Each cube face carries an n x n grid; rays from the ball centre through
    the grid points give m geometrically graded hex layers between the sphere
    and the cube. Every hex is cut into 6 tets around one of its diagonals.
    The diagonal follows an edge orientation that is constant along each
    band of parallel edges (tangential edges point towards the centre of
    their cube face, radial edges outward), so neighbouring hexes agree on
    shared quad diagonals and the acute corners at cube edges stay off the
    diagonal. The tet count is 36 n^2 m; ``resolution=(n, m)`` overrides the choice from
    ``target_tets``.
    """
    c = np.asarray(ball_center, dtype=float)
    r = float(ball_radius)
    if r <= 0 or np.any(c - r <= 0) or np.any(c + r >= 1):
        raise ValueError("ball must lie strictly inside the unit cube")
    if resolution is None:
        if target_tets < 36 * 4:
            raise ValueError(f"target_tets={target_tets} too coarse to resolve the ball "
                             "(minimum 144)")
        n, m = _cavity_resolution(target_tets)
    else:
        n, m = resolution
    if n < 2 or m < 1:
        raise ValueError("need n >= 2 surface cells and m >= 1 layers")

    # surface lattice points of the cube, indexed once
    surf_index = {}
    surf_pts = []
    for ijk in product(range(n + 1), repeat=3):
        if any(v in (0, n) for v in ijk):
            surf_index[ijk] = len(surf_pts)
            surf_pts.append(ijk)
    # equiangular spacing on the cube faces evens out the cell sizes of the
    # projected grid on the sphere near the cube corners
    ticks = 0.5 + 0.5 * np.tan(np.linspace(-np.pi / 4, np.pi / 4, n + 1))
    ticks[0], ticks[-1] = 0.0, 1.0
    q = ticks[np.array(surf_pts)]
    d = q - c
    s = c + r * d / np.linalg.norm(d, axis=1)[:, None]
    ns = len(q)
    # geometric radial spacing keeps layer thickness proportional to the
    # tangential spacing, which shrinks towards the sphere
    dist = np.linalg.norm(d, axis=1)[:, None]
    unit = d / dist
    pts = [c + unit * r * (dist / r) ** (j / m) for j in range(m + 1)]
    # exact boundary placement: sphere layer and cube layer
    pts[0] = s
    pts[-1] = q
    vertices = [np.concatenate(pts)]

    def vid(ijk, layer):
        return layer * ns + surf_index[ijk]

    tets = []
    for axis in range(3):
        for side in (0, n):
            a1, a2 = [a for a in range(3) if a != axis]
            for i, j, layer in product(range(n), range(n), range(m)):
                # path start: tangential bands point towards the face centre,
                # radial edges outward
                start = (int(i >= n // 2), int(j >= n // 2), 0)
                for perm in permutations(range(3)):
                    step = list(start)
                    path = []
                    for d_ in (None,) + perm:
                        if d_ is not None:
                            step[d_] = 1 - step[d_]
                        ijk = [0, 0, 0]
                        ijk[axis] = side
                        ijk[a1] = i + step[0]
                        ijk[a2] = j + step[1]
                        path.append(vid(tuple(ijk), layer + step[2]))
                    tets.append(path)
    vertices = vertices[0]
    tets = _orient(vertices, np.array(tets, dtype=np.int64))
    geom = ExactGeometry("cube_minus_sphere", tuple(float(v) for v in c), r)
    mesh = StraightMesh(vertices, tets, geom)
    logger.info("cavity mesh n=%d m=%d: %d tets", n, m, mesh.n_elements)
    return mesh


def generate_cube_mesh(n=2, lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0)):
    """Kuhn-split structured mesh of a box (flat boundary, identity geometry)."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    g = np.linspace(0, 1, n + 1)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    vertices = lo + X * (hi - lo)

    def idx(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    tets = []
    for i, j, k in product(range(n), repeat=3):
        def corner(bits, i=i, j=j, k=k):
            return idx(i + bits[0], j + bits[1], k + bits[2])
        tets.extend(_kuhn_cube_tets(corner))
    tets = _orient(vertices, np.array(tets, dtype=np.int64))
    return StraightMesh(vertices, tets, ExactGeometry("identity"))


def single_tet_mesh():
    return StraightMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]),
                        np.array([[0, 1, 2, 3]]))

"""Legacy ASCII VTK output of discontinuous fields on curved tetrahedra.

Every curved element is sampled on its own degree-s lattice and split into
s^3 straight sub-tetrahedra (cell type 10). Points are not shared between
elements, so discontinuous tangential velocity components are kept.
"""
from pathlib import Path

import numpy as np

from ._poly import lattice_indices
from .spaces import iter_chunks, piola_divergence, piola_values

VTK_TETRA = 10


def lattice_subdivision(s):
    """Reference lattice points (n, 3) and sub-tet connectivity (s^3, 4)."""
    s = max(int(s), 1)
    index = {}
    pts = []
    for i in range(s + 1):
        for j in range(s + 1 - i):
            for k in range(s + 1 - i - j):
                index[(i, j, k)] = len(pts)
                pts.append((i / s, j / s, k / s))
    cells = []
    for (i, j, k) in list(index):
        m = i + j + k
        if m <= s - 1:
            cells.append([(i, j, k), (i + 1, j, k), (i, j + 1, k), (i, j, k + 1)])
        if m <= s - 2:
            a, b, c = (i + 1, j, k), (i, j + 1, k), (i, j, k + 1)
            d, e, f = (i + 1, j + 1, k), (i + 1, j, k + 1), (i, j + 1, k + 1)
            # octahedron a-b-c-d-e-f split along the diagonal b-e
            cells += [[a, b, c, e], [a, b, e, d], [b, c, e, f], [b, d, e, f]]
        if m <= s - 3:
            cells.append([(i + 1, j + 1, k), (i + 1, j, k + 1), (i, j + 1, k + 1),
                          (i + 1, j + 1, k + 1)])
    pts = np.array(pts)
    conn = np.array([[index[v] for v in c] for c in cells], dtype=np.int64)
    # positive orientation in the reference element
    p = pts[conn]
    vol = np.einsum("ci,ci->c", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0])
    flip = vol < 0
    conn[flip, 2], conn[flip, 3] = conn[flip, 3].copy(), conn[flip, 2].copy()
    return pts, conn


def sample_fields(fields, cmesh, dofmap, ref_points):
    """Physical points, velocity, pressure and divergence at per-element reference points."""
    b = dofmap.basis
    vhat = b.values(ref_points)
    divhat = b.divergence(ref_points)
    psi = dofmap.pbasis.values(ref_points)
    ne = cmesh.n_elements
    nq = len(ref_points)
    x = np.empty((ne, nq, 3))
    u = np.empty((ne, nq, 3))
    p = np.empty((ne, nq))
    d = np.empty((ne, nq))
    for elems in iter_chunks(ne, 2048):
        geo = cmesh.evaluate(elems, ref_points, second=False)
        c = fields.velocity[dofmap.l2g[elems]] * dofmap.sign[elems]
        x[elems] = geo["x"]
        u[elems] = np.einsum("eb,eqbi->eqi", c, piola_values(geo, vhat))
        d[elems] = np.einsum("eb,eqb->eq", c, piola_divergence(geo, divhat))
        p[elems] = np.einsum("qb,eb->eq", psi, fields.pressure[dofmap.p_l2g[elems]])
    return x, u, p, d


def export_vtk(fields, cmesh, dofmap, path, subdivisions=None, title="curvedstokes solution"):
    """Write velocity, pressure and pointwise divergence as an unstructured grid."""
    s = subdivisions or max(dofmap.degree, cmesh.degree)
    ref, conn = lattice_subdivision(s)
    x, u, p, d = sample_fields(fields, cmesh, dofmap, ref)
    ne, nq = x.shape[:2]
    cells = (np.arange(ne)[:, None, None] * nq + conn[None]).reshape(-1, 4)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {ne * nq} double\n")
        np.savetxt(fh, x.reshape(-1, 3), fmt="%.12g")
        fh.write(f"CELLS {len(cells)} {5 * len(cells)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(cells), 4), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        np.savetxt(fh, np.full(len(cells), VTK_TETRA), fmt="%d")
        fh.write(f"POINT_DATA {ne * nq}\n")
        fh.write("VECTORS velocity double\n")
        np.savetxt(fh, u.reshape(-1, 3), fmt="%.12g")
        for name, arr in (("pressure", p), ("divergence", d)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, arr.reshape(-1), fmt="%.12g")
    return path


def read_vtk(path):
    """Parse the legacy ASCII unstructured grids written by :func:`export_vtk`."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    if not tokens[0].startswith("# vtk DataFile"):
        raise ValueError("not a legacy VTK file")
    if tokens[2].strip() != "ASCII" or tokens[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise ValueError("expected an ASCII unstructured grid")
    words = " ".join(tokens[4:]).split()
    pos = 0
    out = {"point_data": {}}

    def take(n, dtype=float):
        nonlocal pos
        vals = np.array(words[pos:pos + n], dtype=dtype)
        pos += n
        return vals

    npts = None
    while pos < len(words):
        key = words[pos]
        if key == "POINTS":
            npts = int(words[pos + 1])
            pos += 3
            out["points"] = take(3 * npts).reshape(npts, 3)
        elif key == "CELLS":
            nc, size = int(words[pos + 1]), int(words[pos + 2])
            pos += 3
            raw = take(size, np.int64)
            if np.any(raw[::5] != 4):
                raise ValueError("only tetrahedral cells are supported")
            out["cells"] = raw.reshape(nc, 5)[:, 1:]
        elif key == "CELL_TYPES":
            nc = int(words[pos + 1])
            pos += 2
            out["cell_types"] = take(nc, np.int64)
        elif key == "POINT_DATA":
            pos += 2
        elif key == "VECTORS":
            name = words[pos + 1]
            pos += 3
            out["point_data"][name] = take(3 * npts).reshape(npts, 3)
        elif key == "SCALARS":
            name = words[pos + 1]
            pos += 4
            if words[pos] == "LOOKUP_TABLE":
                pos += 2
            out["point_data"][name] = take(npts)
        else:
            raise ValueError(f"unexpected VTK keyword {key!r}")
    return out

"""Monomial and lattice helpers shared by the geometry and space modules."""
from itertools import product
from math import factorial

import numpy as np

REF_VERTICES = np.array([[0.0, 0.0, 0.0],
                         [1.0, 0.0, 0.0],
                         [0.0, 1.0, 0.0],
                         [0.0, 0.0, 1.0]])

# local face i is opposite local vertex i
FACE_VERTICES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])

EDGE_VERTICES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def monomial_exponents(degree, dim=3):
    """Exponent tuples of all monomials of total degree <= `degree`.

    Ordered by total degree, then reverse-lexicographically, so the first
    entries are always 1, x, y, z, ...
    """
    out = []
    for total in range(degree + 1):
        for exps in product(range(total, -1, -1), repeat=dim):
            if sum(exps) == total:
                out.append(exps)
    return np.array(out, dtype=int).reshape(-1, dim)


def homogeneous_exponents(degree, dim=3):
    exps = monomial_exponents(degree, dim)
    return exps[exps.sum(axis=1) == degree]


def eval_monomials(points, exps, deriv=None):
    """Evaluate monomials (or one partial derivative of them) at points.

    Parameters
    ----------
    points : (..., d) array
    exps : (m, d) int array
    deriv : tuple of d ints, optional
        Order of differentiation in each coordinate.

    Returns
    -------
    (..., m) array
    """
    points = np.asarray(points, dtype=float)
    exps = np.asarray(exps)
    dim = exps.shape[1]
    if deriv is None:
        deriv = (0,) * dim
    out = np.ones(points.shape[:-1] + (exps.shape[0],))
    for c in range(dim):
        d = deriv[c]
        e = exps[:, c] - d
        coef = np.ones(exps.shape[0])
        for s in range(d):
            coef *= exps[:, c] - s
        alive = e >= 0
        pw = np.where(alive, e, 0)
        out *= np.where(alive, coef, 0.0) * points[..., c:c + 1] ** pw
    return out


def monomial_gradients(points, exps):
    """(..., m, d) array of monomial gradients."""
    dim = exps.shape[1]
    grads = []
    for c in range(dim):
        d = [0] * dim
        d[c] = 1
        grads.append(eval_monomials(points, exps, tuple(d)))
    return np.stack(grads, axis=-1)


def monomial_hessians(points, exps):
    """(..., m, d, d) array of monomial second derivatives."""
    dim = exps.shape[1]
    out = np.empty(np.shape(points)[:-1] + (exps.shape[0], dim, dim))
    for a in range(dim):
        for b in range(a, dim):
            d = [0] * dim
            d[a] += 1
            d[b] += 1
            val = eval_monomials(points, exps, tuple(d))
            out[..., a, b] = val
            out[..., b, a] = val
    return out


def tet_monomial_integral(a, b, c):
    """Exact integral of x^a y^b z^c over the reference tetrahedron."""
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


def lattice_indices(degree, nverts):
    """Barycentric multi-indices (summing to `degree`) of the equispaced lattice."""
    if nverts == 1:
        return [(degree,)]
    out = []
    for first in range(degree, -1, -1):
        for rest in lattice_indices(degree - first, nverts - 1):
            out.append((first,) + rest)
    return out


def tet_lattice(degree):
    """Reference coordinates and multi-indices of the degree-k tet lattice.

    Vertices come first, then edge nodes, face nodes and interior nodes, which
    keeps vertex nodes at fixed positions 0..3 for every degree.
    """
    idx = lattice_indices(degree, 4)

    def rank(m):
        nz = sum(1 for v in m if v > 0)
        return nz

    idx = sorted(idx, key=lambda m: (rank(m), [-v for v in m]))
    bary = np.array(idx, dtype=float) / degree if degree > 0 else np.array([[1.0, 0, 0, 0]])
    pts = bary @ REF_VERTICES
    return pts, np.array(idx, dtype=int)


def lagrange_coefficients(nodes, degree):
    """Monomial coefficients (n_monomials, n_nodes) of the nodal Lagrange basis."""
    exps = monomial_exponents(degree, nodes.shape[1])
    vander = eval_monomials(nodes, exps)
    return np.linalg.inv(vander), exps

"""Positive-weight symmetric quadrature on the reference tetrahedron and triangle.

Rules are the Xiao-Gimbutas tables shipped with :mod:`modepy`, rescaled from
the bi-unit simplex to the unit simplex with vertices at the origin and the
coordinate unit vectors.
"""
from dataclasses import dataclass
from functools import lru_cache

import modepy
import numpy as np

MAX_DEGREE = 14


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self):
        return len(self.weights)


def _check(degree):
    if not 1 <= int(degree) <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree}; expected 1..{MAX_DEGREE}")


@lru_cache(maxsize=None)
def tet_quadrature(exactness_degree):
    """Rule on {x, y, z >= 0, x + y + z <= 1}; weights sum to 1/6."""
    _check(exactness_degree)
    q = modepy.XiaoGimbutasSimplexQuadrature(int(exactness_degree), 3)
    pts = (q.nodes.T + 1.0) / 2.0
    w = q.weights / 8.0
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, int(q.exact_to))


@lru_cache(maxsize=None)
def tri_quadrature(exactness_degree):
    """Rule on {s, t >= 0, s + t <= 1}; weights sum to 1/2."""
    _check(exactness_degree)
    q = modepy.XiaoGimbutasSimplexQuadrature(int(exactness_degree), 2)
    pts = (q.nodes.T + 1.0) / 2.0
    w = q.weights / 4.0
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, int(q.exact_to))

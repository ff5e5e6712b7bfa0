"""Shared P1 finite-element assembly on triangulations."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def p1_gradients(points: np.ndarray, triangles: np.ndarray):
    """Constant gradients of the three hat functions per triangle.

    Returns (grads, areas) with grads of shape (nt, 3, 2): grads[t, i] is the
    gradient of the hat function of local vertex i on triangle t.
    """
    p = points[triangles]
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    area2 = e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0])
    grads = np.empty((len(triangles), 3, 2))
    # grad of hat_i is the 90-degree rotation of the opposite edge / (2A)
    for i, e in enumerate((e0, e1, e2)):
        grads[:, i, 0] = -e[:, 1] / area2
        grads[:, i, 1] = e[:, 0] / area2
    return grads, 0.5 * area2


def stiffness_matrix(points: np.ndarray, triangles: np.ndarray) -> sp.csr_matrix:
    """P1 stiffness (cotangent) matrix, assembled from per-triangle gradients."""
    grads, areas = p1_gradients(points, triangles)
    n = len(points)
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(triangles[:, i])
            cols.append(triangles[:, j])
            vals.append(areas * np.einsum("td,td->t", grads[:, i], grads[:, j]))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def lumped_mass(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    _, areas = p1_gradients(points, triangles)
    m = np.zeros(len(points))
    for i in range(3):
        np.add.at(m, triangles[:, i], areas / 3.0)
    return m


def field_gradients(points, triangles, values) -> np.ndarray:
    """Per-triangle constant gradient of a P1 field."""
    grads, _ = p1_gradients(points, triangles)
    return np.einsum("tiv,ti->tv", grads, values[triangles])


def dirichlet_energy(points, triangles, values) -> float:
    """Integral of |grad u|^2 for one or several stacked P1 fields."""
    grads, areas = p1_gradients(points, triangles)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    total = 0.0
    for k in range(vals.shape[1]):
        g = np.einsum("tiv,ti->tv", grads, vals[:, k][triangles])
        total += float(np.sum(areas * np.einsum("tv,tv->t", g, g)))
    return total


def solve_pinned(A: sp.csr_matrix, b: np.ndarray, pin: int, pin_value: float = 0.0) -> np.ndarray:
    """Solve A x = b with one degree of freedom pinned (pure-Neumann systems)."""
    from scipy.sparse.linalg import spsolve

    n = A.shape[0]
    keep = np.ones(n, dtype=bool)
    keep[pin] = False
    idx = np.nonzero(keep)[0]
    A_red = A[idx][:, idx].tocsc()
    rhs = b[idx] - A[idx][:, [pin]].toarray().ravel() * pin_value
    x = np.empty(n)
    x[idx] = spsolve(A_red, rhs)
    x[pin] = pin_value
    return x

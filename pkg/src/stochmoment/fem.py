"""One-dimensional p-type finite elements with hierarchic shape functions.

The basis on each element consists of the two hat functions plus the
integrated Legendre bubbles of degree 2..order. Homogeneous Dirichlet
conditions are imposed by dropping the two boundary vertex functions, so 20
quartic elements give 19 + 20*3 = 79 unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg


def _legendre_values(n: int, xi: np.ndarray) -> np.ndarray:
    """Unnormalized Legendre P_0..P_n at xi, shape (n+1, len(xi))."""
    out = np.empty((n + 1, xi.size))
    out[0] = 1.0
    if n >= 1:
        out[1] = xi
    for k in range(1, n):
        out[k + 1] = ((2 * k + 1) * xi * out[k] - k * out[k - 1]) / (k + 1)
    return out


def reference_shapes(order: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shape values and d/dxi on the reference element [-1, 1]."""
    P = _legendre_values(max(order, 1), xi)
    vals = np.empty((order + 1, xi.size))
    ders = np.empty((order + 1, xi.size))
    vals[0], ders[0] = (1 - xi) / 2, -0.5
    vals[1], ders[1] = (1 + xi) / 2, 0.5
    for j in range(2, order + 1):
        vals[j] = (P[j] - P[j - 2]) / np.sqrt(2.0 * (2 * j - 1))
        ders[j] = np.sqrt((2 * j - 1) / 2.0) * P[j - 1]
    return vals, ders


@dataclass
class FemSpace:
    """Conforming 1D space on a uniform mesh with zero boundary values.

    ``values`` and ``grads`` map dof vectors to function values and
    derivatives at the quadrature points ``x``; ``w`` holds the quadrature
    weights including the element Jacobian.
    """

    elements: int = 20
    order: int = 4
    domain: tuple[float, float] = (-1.0, 1.0)
    qpoints: int | None = None
    x: np.ndarray = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)
    values: sp.csr_matrix = field(init=False, repr=False)
    grads: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        if self.elements < 1 or self.order < 1:
            raise ValueError("need at least one element of order >= 1")
        nq = self.qpoints or self.order + 8
        self.qpoints = nq
        xi, wi = npleg.leggauss(nq)
        a, b = self.domain
        h = (b - a) / self.elements
        vals, ders = reference_shapes(self.order, xi)
        ne, p = self.elements, self.order
        nv = ne - 1
        rows, cols, vv, dd = [], [], [], []
        xs, ws = [], []
        for e in range(ne):
            left = a + e * h
            xs.append(left + (xi + 1) * h / 2)
            ws.append(wi * h / 2)
            dofs = [e - 1 if e > 0 else -1, e if e < ne - 1 else -1]
            dofs += [nv + e * (p - 1) + (j - 2) for j in range(2, p + 1)]
            for loc, dof in enumerate(dofs):
                if dof < 0:
                    continue
                rows.append(e * nq + np.arange(nq))
                cols.append(np.full(nq, dof))
                vv.append(vals[loc])
                dd.append(ders[loc] * 2 / h)
        self.x = np.concatenate(xs)
        self.w = np.concatenate(ws)
        shape = (ne * nq, self.ndof)
        r, c = np.concatenate(rows), np.concatenate(cols)
        self.values = sp.csr_matrix((np.concatenate(vv), (r, c)), shape=shape)
        self.grads = sp.csr_matrix((np.concatenate(dd), (r, c)), shape=shape)

    @property
    def ndof(self) -> int:
        return (self.elements - 1) + self.elements * (self.order - 1)

    def stiffness(self, coeff) -> sp.csr_matrix:
        """Matrix of ``int c(x) v' w' dx`` for coefficient values (or a scalar) at ``x``."""
        c = np.broadcast_to(np.asarray(coeff, dtype=float), self.x.shape)
        D = self.grads
        return (D.T @ sp.diags(self.w * c) @ D).tocsr()

    def load(self, f=1.0) -> np.ndarray:
        fv = np.broadcast_to(np.asarray(f, dtype=float), self.x.shape)
        return self.values.T @ (self.w * fv)

    def l2_norm(self, qp_values) -> float:
        v = np.asarray(qp_values)
        return float(np.sqrt(np.sum(self.w * v * v)))

    def energy_norms(self, dof_rows: np.ndarray) -> np.ndarray:
        """Gradient L2 norms of each row of ``dof_rows``."""
        g = self.grads @ np.atleast_2d(dof_rows).T
        return np.sqrt(self.w @ (g * g))

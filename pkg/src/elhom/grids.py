"""Uniform periodic discretization of the multi-cell kY = [0, k)^n.

Multilinear (Q1) elements on a uniform grid with tensor-product 2-point
Gauss quadrature.  Periodic identification is index arithmetic: one stored
value per identified node, elements wrap modulo the grid.  `res` is the
number of nodes per unit length and must be even so that the axis-aligned
microstructures of the density catalog are resolved exactly (interfaces at
half-integers fall on element boundaries).
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch

_GAUSS_1D = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


class PeriodicGrid:
    """Q1 discretization of kY with periodic degree-of-freedom identification."""

    def __init__(self, dim: int, k: int = 1, res: int = 8):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if k < 1:
            raise ValueError("multi-cell factor k must be >= 1")
        if res < 2 or res % 2 != 0:
            raise ValueError("res must be an even integer >= 2")
        self.dim = dim
        self.k = int(k)
        self.res = int(res)
        self.N = self.k * self.res          # nodes (= elements) per axis
        self.a = 1.0 / self.res             # grid spacing
        self.node_count = self.N**dim
        self.elem_count = self.N**dim

        n = dim
        self._corner_offsets = np.array(
            list(itertools.product((0, 1), repeat=n)), dtype=np.int64
        )  # (C, n)
        xi = np.array(list(itertools.product(_GAUSS_1D, repeat=n)))  # (Q, n)
        self.n_corners = 2**n
        self.n_qp_per_elem = 2**n
        # shape values and reference gradients at the quadrature points
        C, Q = self.n_corners, self.n_qp_per_elem
        self.PHI = np.ones((Q, C))
        self.DPHI = np.zeros((Q, C, n))
        for c, off in enumerate(self._corner_offsets):
            for q in range(Q):
                vals = np.where(off == 1, xi[q], 1.0 - xi[q])
                self.PHI[q, c] = np.prod(vals)
                for axis in range(n):
                    d = 1.0 if off[axis] == 1 else -1.0
                    others = np.prod(np.delete(vals, axis))
                    self.DPHI[q, c, axis] = d * others
        self._xi = xi

        idx = np.indices((self.N,) * n).reshape(n, -1).T  # (E, n)
        self._elem_index = idx
        self.elem_nodes = np.empty((self.elem_count, C), dtype=np.int64)
        for c, off in enumerate(self._corner_offsets):
            wrapped = (idx + off) % self.N
            self.elem_nodes[:, c] = np.ravel_multi_index(wrapped.T, (self.N,) * n)

        qp = (idx[:, None, :] + xi[None, :, :]) * self.a  # (E, Q, n)
        self.quad_points = qp.reshape(-1, n)
        w = self.k**n / float(self.elem_count * Q)
        self.quad_weights = np.full(self.elem_count * Q, w)

    # -- geometry ------------------------------------------------------------

    def node_coords(self) -> np.ndarray:
        idx = np.indices((self.N,) * self.dim).reshape(self.dim, -1).T
        return idx * self.a

    # -- interpolation / differentiation at quadrature points -----------------

    def _corner_views(self, values: np.ndarray):
        """Node values gathered per element corner by periodic rolls.

        Returns an array of shape (C, E, m); avoids fancy indexing, which
        dominates the cost of assembly on large grids.
        """
        n = self.dim
        V = values.reshape((self.N,) * n + (values.shape[-1],))
        out = np.empty((self.n_corners,) + V.shape)
        for c, off in enumerate(self._corner_offsets):
            W = V
            for axis in range(n):
                if off[axis]:
                    W = np.roll(W, -1, axis=axis)
            out[c] = W
        return out.reshape(self.n_corners, self.elem_count, values.shape[-1])

    def gradient_at_quadrature(self, values: np.ndarray) -> np.ndarray:
        """Gradient of the Q1 interpolant, shape (E*Q, m, dim).

        `values` has shape (node_count, m) (or (node_count,) for scalars).
        """
        values = np.asarray(values, dtype=float)
        scalar = values.ndim == 1
        if scalar:
            values = values[:, None]
        m = values.shape[1]
        fv = self._corner_views(values)  # (C, E, m)
        fv2 = fv.reshape(self.n_corners, -1)  # (C, E*m)
        out = np.empty((self.elem_count, self.n_qp_per_elem, m, self.dim))
        for q in range(self.n_qp_per_elem):
            # (E*m, n) <- (E*m, C) @ (C, n), one BLAS call per quad point
            out[:, q] = (fv2.T @ (self.DPHI[q] / self.a)).reshape(
                self.elem_count, m, self.dim
            )
        out = out.reshape(-1, m, self.dim)
        return out[:, 0, :] if scalar else out

    def value_at_quadrature(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        scalar = values.ndim == 1
        if scalar:
            values = values[:, None]
        fv = self._corner_views(values)
        out = np.einsum("qc,cem->eqm", self.PHI, fv).reshape(-1, values.shape[1])
        return out[:, 0] if scalar else out

    def _scatter_corners(self, contrib: np.ndarray) -> np.ndarray:
        """Adjoint of _corner_views: (C, E, m) -> (node_count, m)."""
        n = self.dim
        m = contrib.shape[-1]
        out = np.zeros((self.N,) * n + (m,))
        for c, off in enumerate(self._corner_offsets):
            W = contrib[c].reshape((self.N,) * n + (m,))
            for axis in range(n):
                if off[axis]:
                    W = np.roll(W, 1, axis=axis)
            out += W
        return out.reshape(self.node_count, m)

    def scatter_gradient(self, P: np.ndarray) -> np.ndarray:
        """Adjoint of gradient_at_quadrature: (E*Q, m, dim) -> (node_count, m)."""
        m = P.shape[1]
        Pe = P.reshape(self.elem_count, self.n_qp_per_elem, m, self.dim)
        contrib = np.zeros((self.n_corners, self.elem_count * m))
        for q in range(self.n_qp_per_elem):
            # (C, E*m) += (C, n) @ (n, E*m)
            contrib += (self.DPHI[q] / self.a) @ Pe[:, q].reshape(-1, self.dim).T
        return self._scatter_corners(contrib.reshape(self.n_corners, self.elem_count, m))

    def scatter_value(self, P: np.ndarray) -> np.ndarray:
        """Adjoint of value_at_quadrature: (E*Q, m) -> (node_count, m)."""
        m = P.shape[1]
        Pe = P.reshape(self.elem_count, self.n_qp_per_elem, m)
        contrib = np.einsum("qc,eqm->cem", self.PHI, Pe)
        return self._scatter_corners(contrib)

    def integrate(self, values_at_quadrature: np.ndarray) -> float:
        """Quadrature sum over kY; exact for piecewise multilinear integrands."""
        v = np.asarray(values_at_quadrature, dtype=float)
        if v.shape[0] != self.quad_weights.shape[0]:
            raise LengthMismatch(
                f"expected {self.quad_weights.shape[0]} quadrature values, got {v.shape[0]}"
            )
        return float(np.dot(self.quad_weights, v))

    def __repr__(self):
        return f"PeriodicGrid(dim={self.dim}, k={self.k}, res={self.res})"


@dataclass
class PeriodicField:
    """Node values of a kY-periodic vector field (one value per identified node)."""

    grid: PeriodicGrid
    values: np.ndarray  # (node_count, ncomp)

    @classmethod
    def zeros(cls, grid: PeriodicGrid, ncomp: int | None = None) -> "PeriodicField":
        return cls(grid, np.zeros((grid.node_count, ncomp or grid.dim)))

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn) -> "PeriodicField":
        """Sample fn(coords (M, n)) -> (M, ncomp) at the nodes."""
        return cls(grid, np.asarray(fn(grid.node_coords()), dtype=float))

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    def mean(self) -> np.ndarray:
        # uniform periodic Q1: the interpolant's mean is the node average
        return self.values.mean(axis=0)

    def project_mean_zero(self) -> "PeriodicField":
        return PeriodicField(self.grid, self.values - self.mean())

    def copy(self) -> "PeriodicField":
        return PeriodicField(self.grid, self.values.copy())

    def periodize(self, k_new: int) -> "PeriodicField":
        """Periodic extension to a larger multi-cell (k_new multiple of k)."""
        g = self.grid
        if k_new % g.k != 0:
            raise ValueError("k_new must be a multiple of the current k")
        if k_new == g.k:
            return self.copy()
        gnew = PeriodicGrid(g.dim, k_new, g.res)
        idx = np.indices((gnew.N,) * g.dim).reshape(g.dim, -1).T % g.N
        old_flat = np.ravel_multi_index(idx.T, (g.N,) * g.dim)
        return PeriodicField(gnew, self.values[old_flat])

    # -- serialization: header (dim,k,res), node values in lexicographic order

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{self.grid.dim},{self.grid.k},{self.grid.res}\n")
            np.savetxt(fh, self.values, delimiter=",", fmt="%.17g")

    @classmethod
    def load_csv(cls, path) -> "PeriodicField":
        with open(path) as fh:
            dim, k, res = (int(t) for t in fh.readline().strip().split(","))
            values = np.loadtxt(io.StringIO(fh.read()), delimiter=",", ndmin=2)
        grid = PeriodicGrid(dim, k, res)
        if values.shape[0] != grid.node_count:
            raise LengthMismatch(
                f"file has {values.shape[0]} rows, grid needs {grid.node_count}"
            )
        return cls(grid, values)


def project_mean_zero(field: PeriodicField) -> PeriodicField:
    """Subtract the componentwise mean; idempotent."""
    return field.project_mean_zero()

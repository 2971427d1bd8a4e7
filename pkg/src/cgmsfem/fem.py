"""Q1 finite element kernels on rectangular regions.

Stiffness/mass/load assembly with cellwise coefficients, Dirichlet solves by
row/column elimination (keeping SPD structure), harmonic extensions with a
reusable factorization for many boundary conditions, fine-grid reference
solves over an ensemble, and a dense generalized symmetric eigensolver for
the small local spectral problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._util import pmap
from .exceptions import NumericalError
from .grid import Region

_RESIDUAL_TOL = 1e-10


def element_stiffness(hx: float, hy: float) -> np.ndarray:
    """Exact 4x4 Q1 element stiffness on an hx-by-hy rectangle, unit coefficient.

    Node order ll, lr, ul, ur; entries are the tensor-product integrals
    sum of grad(N_a) . grad(N_b) over the cell.
    """
    gx = np.array([[1.0, -1.0], [-1.0, 1.0]]) / hx
    gy = np.array([[1.0, -1.0], [-1.0, 1.0]]) / hy
    mx = hx * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    my = hy * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    lx = np.array([0, 1, 0, 1])
    ly = np.array([0, 0, 1, 1])
    ax, bx = lx[:, None], lx[None, :]
    ay, by = ly[:, None], ly[None, :]
    return gx[ax, bx] * my[ay, by] + mx[ax, bx] * gy[ay, by]


def element_mass(hx: float, hy: float) -> np.ndarray:
    """Exact 4x4 Q1 element mass matrix on an hx-by-hy rectangle."""
    mx = hx * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    my = hy * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    lx = np.array([0, 1, 0, 1])
    ly = np.array([0, 0, 1, 1])
    return mx[lx[:, None], lx[None, :]] * my[ly[:, None], ly[None, :]]


def _cellwise(region: Region, coeff) -> np.ndarray:
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        return np.full(region.n_cells, float(c))
    if c.shape != (region.n_cells,):
        raise ValueError(
            f"cellwise field has shape {c.shape}, expected ({region.n_cells},)"
        )
    return c


def _scatter(region: Region, cell_matrices: np.ndarray) -> sp.csr_matrix:
    conn = region.cell_nodes
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    n = region.n_nodes
    A = sp.coo_matrix((cell_matrices.ravel(), (rows, cols)), shape=(n, n))
    return A.tocsr()


def assemble_stiffness(region: Region, coeff) -> sp.csr_matrix:
    """Stiffness matrix over all region nodes (no boundary conditions).

    coeff is constant per fine cell (scalar or length-n_cells array) and must
    be strictly positive.
    """
    c = _cellwise(region, coeff)
    if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
        raise ValueError("coefficient must be finite and strictly positive cellwise")
    E = element_stiffness(region.grid.hx, region.grid.hy)
    return _scatter(region, c[:, None, None] * E)


def assemble_mass(region: Region, weight=1.0) -> sp.csr_matrix:
    """Mass matrix with a cellwise weight (midpoint value per fine cell)."""
    w = _cellwise(region, weight)
    if not np.all(np.isfinite(w)):
        raise ValueError("mass weight must be finite")
    E = element_mass(region.grid.hx, region.grid.hy)
    return _scatter(region, w[:, None, None] * E)


def assemble_load(region: Region, f) -> np.ndarray:
    """Load vector for a source given cellwise, nodally, or as a scalar.

    Integration is exact for these piecewise representations (equivalent to
    2x2 tensor Gauss quadrature per cell).
    """
    arr = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("source field must be finite")
    if arr.ndim == 0 or arr.shape == (region.n_cells,):
        fc = _cellwise(region, arr)
        b = np.zeros(region.n_nodes)
        contrib = fc * (region.grid.hx * region.grid.hy / 4.0)
        for loc in range(4):
            np.add.at(b, region.cell_nodes[:, loc], contrib)
        return b
    if arr.shape == (region.n_nodes,):
        return assemble_mass(region) @ arr
    raise ValueError(
        f"source shape {arr.shape} matches neither cells ({region.n_cells},) "
        f"nor nodes ({region.n_nodes},)"
    )


def restrict_source(region: Region, f):
    """Restrict a domain-wide source (scalar, cellwise or nodal) to a region."""
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    g = region.grid
    if arr.shape == (g.n_cells,):
        return arr[region.cell_ids]
    if arr.shape == (g.n_nodes,):
        return arr[region.node_ids]
    raise ValueError(f"source shape {arr.shape} is not domain-wide for {g.nx}x{g.ny}")


class DirichletSolver:
    """Eliminated-boundary SPD solve with a reusable sparse factorization.

    Factorizes the free-node block once; `solve` then handles any number of
    load vectors and boundary data sets.
    """

    def __init__(self, A: sp.spmatrix, boundary):
        n = A.shape[0]
        self.boundary = np.asarray(boundary, dtype=np.intp)
        mask = np.ones(n, dtype=bool)
        mask[self.boundary] = False
        self.free = np.flatnonzero(mask)
        self.n = n
        A = A.tocsr()
        self._A_fb = A[self.free][:, self.boundary].tocsr()
        A_ff = A[self.free][:, self.free].tocsc()
        try:
            self._lu = spla.splu(A_ff)
        except RuntimeError as exc:  # singular factorization
            raise NumericalError(f"Dirichlet system is singular: {exc}") from exc
        self._A_ff = A_ff
        self._norm_A = spla.norm(A_ff, np.inf) if A_ff.nnz else 0.0

    def solve(self, load=None, boundary_values=None) -> np.ndarray:
        """Solve with u = boundary_values on the boundary node set.

        `load` is a length-n vector (or (m, n) batch); `boundary_values` a
        scalar, per-boundary-node vector, or (m, n_boundary) batch.  Returns
        fields shaped like the broadcast batch.
        """
        n_b = len(self.boundary)
        g = np.zeros(n_b) if boundary_values is None else np.asarray(boundary_values, float)
        if g.ndim == 0:
            g = np.full(n_b, float(g))
        b = np.zeros(self.n) if load is None else np.asarray(load, dtype=float)
        batched = g.ndim == 2 or b.ndim == 2
        G = np.atleast_2d(g)
        B = np.atleast_2d(b)
        if G.shape[-1] != n_b or B.shape[-1] != self.n:
            raise ValueError("boundary values / load have wrong lengths")
        m = max(G.shape[0], B.shape[0])
        G = np.broadcast_to(G, (m, n_b))
        B = np.broadcast_to(B, (m, self.n))

        rhs = B[:, self.free] - (self._A_fb @ G.T).T
        x = self._lu.solve(rhs.T)
        x = np.atleast_2d(x.T).reshape(m, -1)
        x = self._check(rhs, x)
        out = np.empty((m, self.n))
        out[:, self.free] = x
        out[:, self.boundary] = G
        return out if batched else out[0]

    def _check(self, rhs, x):
        """Backward-error check with iterative refinement for stiff coefficients."""
        for _ in range(3):
            if not np.all(np.isfinite(x)):
                raise NumericalError("Dirichlet solve produced non-finite values")
            res = rhs - (self._A_ff @ x.T).T
            scale = np.linalg.norm(rhs, axis=1) + self._norm_A * np.linalg.norm(x, axis=1)
            bad = np.linalg.norm(res, axis=1) > _RESIDUAL_TOL * np.maximum(scale, 1e-30)
            if not np.any(bad):
                return x
            x = x + self._lu.solve(res.T).T.reshape(x.shape)
        raise NumericalError(
            f"Dirichlet solve residual stayed above {_RESIDUAL_TOL} relative "
            "after iterative refinement"
        )


def solve_dirichlet(A: sp.spmatrix, b, boundary, values=0.0) -> np.ndarray:
    """One-shot Dirichlet solve; see DirichletSolver for the batch form."""
    return DirichletSolver(A, boundary).solve(load=b, boundary_values=values)


def harmonic_extension(region: Region, coeff, boundary_values, boundary=None):
    """Coefficient-weighted harmonic extension of boundary data into a region.

    `boundary_values` may be a single vector or an (m, n_boundary) batch; the
    interior solve reuses one factorization across the batch.
    """
    if boundary is None:
        boundary = region.boundary_local
    A = assemble_stiffness(region, coeff)
    return DirichletSolver(A, boundary).solve(boundary_values=boundary_values)


def fine_reference_solve(ensemble, f=1.0, threads: int = 1) -> np.ndarray:
    """Homogeneous-Dirichlet fine solve for every realization.

    Returns an (M, n_nodes) array; these fields are the reference against
    which all coarse-space errors are measured.
    """
    if ensemble.M < 1:
        raise ValueError("ensemble is empty")
    region = ensemble.grid.domain()
    boundary = region.boundary_local
    per_realization = isinstance(f, (list, tuple))
    if per_realization and len(f) != ensemble.M:
        raise ValueError("per-realization source list must have length M")
    if not per_realization:
        b_shared = assemble_load(region, restrict_source(region, f))

    def one(i):
        A = assemble_stiffness(region, ensemble.values[i])
        b = b_shared if not per_realization else assemble_load(
            region, restrict_source(region, f[i])
        )
        try:
            return solve_dirichlet(A, b, boundary, 0.0)
        except NumericalError as exc:
            raise NumericalError(f"fine solve failed for realization {i}: {exc}") from exc

    return np.stack(pmap(one, range(ensemble.M), threads))


@dataclass(eq=False)
class EigenDecomposition:
    """All eigenpairs of A v = lambda S v, ascending, S-orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray


def generalized_eig(A: np.ndarray, S: np.ndarray) -> EigenDecomposition:
    """Dense generalized symmetric eigensolve for small local problems.

    Rejects non-symmetric input and S that is not safely positive definite;
    verifies the pairwise residual contract before returning.
    """
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    if A.shape != S.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix shapes {A.shape} and {S.shape} do not match")
    for name, mat in (("A", A), ("S", S)):
        scale = np.abs(mat).max() or 1.0
        if np.abs(mat - mat.T).max() > 1e-12 * scale:
            raise ValueError(f"{name} is not symmetric within 1e-12 relative")
    A = 0.5 * (A + A.T)
    S = 0.5 * (S + S.T)
    s_eigs = np.linalg.eigvalsh(S)
    if s_eigs[0] <= 1e-12 * max(s_eigs[-1], 1e-300):
        raise NumericalError(
            "S is not safely positive definite: smallest/largest eigenvalues "
            f"{s_eigs[0]:.3e}/{s_eigs[-1]:.3e}"
        )
    w, V = scipy.linalg.eigh(A, S)
    R = A @ V - (S @ V) * w
    bound = 1e-8 * (np.linalg.norm(A) + np.abs(w) * np.linalg.norm(S))
    resid = np.linalg.norm(R, axis=0)
    if np.any(resid > np.maximum(bound, 1e-30)):
        raise NumericalError("generalized eigensolve failed its residual contract")
    return EigenDecomposition(w, V)

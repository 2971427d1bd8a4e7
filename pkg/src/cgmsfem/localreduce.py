"""Per-neighborhood randomized local model reduction.

On each oversampled neighborhood: solve local problems with random Gaussian
boundary data for a small subset of realizations, certify how many such
snapshots capture the local solution map (adaptive randomized range finding
with a posterior probe test), compress the snapshot family with a KL
expansion, and then solve cheap reduced local problems for *every*
realization.  The reduced coefficients feed the realization-space distance
used for clustering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._util import STREAM_BOUNDARY, STREAM_PROBE, substream
from .exceptions import NumericalError
from .fem import (
    DirichletSolver,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    restrict_source,
)
from .grid import OversampledNeighborhood, Region


def sample_random_boundary(boundary, seed: int, neighborhood_id: int, j: int):
    """IID standard normal boundary data, deterministic per (seed, i, j)."""
    n = int(boundary) if np.ndim(boundary) == 0 else len(boundary)
    if n < 1:
        raise ValueError("boundary set is empty")
    return substream(seed, STREAM_BOUNDARY, neighborhood_id, j).standard_normal(n)


@dataclass(eq=False)
class LocalSnapshotSet:
    """Snapshots psi_j(., omega) on an oversampled neighborhood.

    snapshots[s, j] is the local solution for subset realization s with
    boundary data boundary_data[j] on the region boundary.
    """

    neighborhood_id: int
    region: Region
    subset: tuple[int, ...]
    boundary_data: np.ndarray  # (k, n_boundary)
    snapshots: np.ndarray  # (n_subset, k, n_nodes)

    @property
    def k(self) -> int:
        return self.boundary_data.shape[0]


def local_randomized_snapshots(
    ovs: OversampledNeighborhood,
    ensemble,
    subset,
    k: int,
    seed: int = 0,
    source=None,
    boundary_data=None,
) -> LocalSnapshotSet:
    """Solve the k random-boundary local problems for each subset realization.

    With source=None the snapshots are coefficient-weighted harmonic
    extensions; passing a domain-wide source adds the local load term.
    """
    subset = tuple(int(s) for s in subset)
    if not subset:
        raise ValueError("realization subset is empty")
    if k < 1:
        raise ValueError("need k >= 1 snapshots")
    region = ovs.region
    bdry = region.boundary_local
    if boundary_data is None:
        boundary_data = np.stack(
            [sample_random_boundary(bdry, seed, ovs.node_id, j) for j in range(k)]
        )
    else:
        boundary_data = np.asarray(boundary_data, dtype=float)
        if boundary_data.shape != (k, len(bdry)):
            raise ValueError("boundary_data must have shape (k, n_boundary)")
    load = None
    if source is not None:
        load = assemble_load(region, restrict_source(region, source))
    snaps = np.empty((len(subset), k, region.n_nodes))
    for s, omega in enumerate(subset):
        try:
            A = assemble_stiffness(region, ensemble.restrict(omega, region))
            snaps[s] = DirichletSolver(A, bdry).solve(
                load=load, boundary_values=boundary_data
            )
        except (NumericalError, ValueError) as exc:
            raise NumericalError(
                f"local snapshot solve failed (neighborhood {ovs.node_id}, "
                f"realization {omega}): {exc}"
            ) from exc
    return LocalSnapshotSet(ovs.node_id, region, subset, boundary_data, snaps)


@dataclass(eq=False)
class RangeCertificate:
    """Outcome of adaptive range finding: certified column count and probes."""

    k: int
    residuals: np.ndarray  # last probe residual norms
    certified: bool
    threshold: float


def _orth_append(Q, Y, rel_tol=1e-10, scale=None):
    """Orthonormal extension of Q by the numerically new directions of Y.

    Directions whose singular value falls below rel_tol times the reference
    scale (largest singular value seen) are treated as noise and dropped.
    """
    if Q is not None:
        Y = Y - Q @ (Q.T @ Y)
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    if scale is None:
        scale = s[0] if s.size else 0.0
    keep = s > rel_tol * max(scale, 1e-300)
    U = U[:, keep]
    Q = U if Q is None else np.hstack([Q, U])
    return Q, scale


def certify_range(
    apply_T,
    dim_in: int,
    *,
    eps: float,
    alpha: float,
    k_probe: int,
    k_init: int = 5,
    k_max: int,
    rng,
    rank_tol: float = 1e-10,
) -> tuple[RangeCertificate, np.ndarray]:
    """Grow a random-image basis of T until fresh probes certify coverage.

    Terminates once k_probe fresh probe images all have post-projection
    residual at most (eps/alpha)*sqrt(pi/2); the failure probability of the
    certified bound is then about alpha**-k_probe.  Returns the certificate
    and the orthonormal basis Q.
    """
    if eps <= 0 or alpha <= 1 or k_probe < 1 or k_init < 1:
        raise ValueError("need eps > 0, alpha > 1, k_probe >= 1, k_init >= 1")
    threshold = (eps / alpha) * np.sqrt(np.pi / 2.0)
    Y = apply_T(rng.standard_normal((dim_in, min(k_init, k_max))))
    Q, scale = _orth_append(None, Y, rank_tol)
    while True:
        P = apply_T(rng.standard_normal((dim_in, k_probe)))
        R = P - Q @ (Q.T @ P) if Q.shape[1] else P
        res = np.linalg.norm(R, axis=0)
        if res.max() <= threshold:
            return RangeCertificate(Q.shape[1], res, True, threshold), Q
        if Q.shape[1] >= k_max:
            warnings.warn(
                f"range finder hit the cap k_max={k_max} with max probe "
                f"residual {res.max():.3e} > {threshold:.3e}",
                stacklevel=2,
            )
            return RangeCertificate(Q.shape[1], res, False, threshold), Q
        Q, scale = _orth_append(Q, P[:, res > threshold], rank_tol, scale)
        Q = Q[:, :k_max]


def certify_snapshot_count(
    ovs: OversampledNeighborhood,
    ensemble,
    omega: int,
    *,
    eps: float = 1e-3,
    alpha: float = 10.0,
    k_probe: int = 5,
    k_init: int = 5,
    k_max: int | None = None,
    seed: int = 0,
    target: Region | None = None,
) -> RangeCertificate:
    """Certified number of random-boundary snapshots for one neighborhood.

    The probed operator maps boundary data on the oversampled region to the
    local solution restricted to the target region (the base neighborhood by
    default): the restriction is where the compressed modes are used, and it
    is what decays with oversampling.
    """
    region = ovs.region
    bdry = region.boundary_local
    A = assemble_stiffness(region, ensemble.restrict(omega, region))
    ds = DirichletSolver(A, bdry)
    sub = target if target is not None else ovs.base.region
    idx = region.local_nodes_of(sub)
    if k_max is None:
        k_max = len(bdry)

    def apply_T(V):
        return ds.solve(boundary_values=V.T)[:, idx].T

    rng = substream(seed, STREAM_PROBE, ovs.node_id, omega)
    cert, _ = certify_range(
        apply_T,
        len(bdry),
        eps=eps,
        alpha=alpha,
        k_probe=k_probe,
        k_init=k_init,
        k_max=k_max,
        rng=rng,
    )
    return cert


@dataclass(eq=False)
class KLModel:
    """Mean-plus-modes compression of a local snapshot family.

    means[j] is the subset average of psi_j; modes are shared across j and
    orthonormal in the region's L2 inner product; coeffs[s, j] are the mode
    coefficients of the centered snapshot (s, j).
    """

    neighborhood_id: int
    region: Region
    subset: tuple[int, ...]
    means: np.ndarray  # (k, n_nodes)
    modes: np.ndarray  # (L, n_nodes)
    energies: np.ndarray  # all sample-covariance eigenvalues, nonincreasing
    coeffs: np.ndarray  # (n_subset, k, L)
    energy_tol: float

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def L(self) -> int:
        return self.modes.shape[0]


def kl_expand(snapshots: LocalSnapshotSet, energy_tol: float = 0.99) -> KLModel:
    """KL expansion of the pooled, per-j-centered snapshot family.

    The truncation L is the smallest mode count whose retained energy
    fraction reaches energy_tol; a zero-variance family yields L = 0.
    """
    if not 0.0 < energy_tol <= 1.0:
        raise ValueError("energy_tol must lie in (0, 1]")
    region = snapshots.region
    n_sub, k, n_nodes = snapshots.snapshots.shape
    means = snapshots.snapshots.mean(axis=0)
    X = (snapshots.snapshots - means).reshape(n_sub * k, n_nodes)
    W = assemble_mass(region)
    G = X @ (W @ X.T)
    G = 0.5 * (G + G.T)
    evals, evecs = np.linalg.eigh(G)
    order = np.argsort(evals)[::-1]
    energies = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = energies.sum()
    if total <= 0.0 or energies[0] <= 0.0:
        return KLModel(
            snapshots.neighborhood_id,
            region,
            snapshots.subset,
            means,
            np.zeros((0, n_nodes)),
            energies,
            np.zeros((n_sub, k, 0)),
            energy_tol,
        )
    # numerically meaningful modes only; the rest is rounding noise
    rank = int(np.sum(energies > 1e-12 * energies[0]))
    L = int(np.searchsorted(np.cumsum(energies), energy_tol * total) + 1)
    L = min(L, rank)
    V = evecs[:, :L]
    s = np.sqrt(energies[:L])
    modes = (V / s).T @ X  # (L, n_nodes), W-orthonormal up to rounding
    # one re-orthonormalization pass pins the Gram matrix to identity
    Gm = modes @ (W @ modes.T)
    C = np.linalg.cholesky(0.5 * (Gm + Gm.T))
    modes = np.linalg.solve(C, modes)
    coeffs = X @ (W @ modes.T)
    return KLModel(
        snapshots.neighborhood_id,
        region,
        snapshots.subset,
        means,
        modes,
        energies,
        coeffs.reshape(n_sub, k, L),
        energy_tol,
    )


@dataclass(eq=False)
class ReducedCoefficients:
    """Reduced local solution coefficients for every realization.

    coeffs[omega, j, l] solves the L-dimensional Galerkin system of the
    local problem for realization omega with mean function j.
    """

    neighborhood_id: int
    coeffs: np.ndarray  # (M, k, L)


class _ReducedOperator:
    """Precomputed cell blocks for fast reduced local solves.

    The reduced problem is the Galerkin projection of the random-boundary
    local problem onto span(modes): trial mean_j + sum_l p phi_l carries the
    snapshot boundary data exactly (modes have zero trace), so for subset
    realizations of a full-rank family the reduced solve reproduces the
    snapshot.  For each cell c: B_c = mode values on the cell's nodes and
    W_c = B_c @ E with E the unit element stiffness; the reduced matrix for
    coefficient kappa is sum_c kappa_c W_c B_c^T.
    """

    def __init__(self, kl: KLModel):
        from .fem import element_stiffness

        self.kl = kl
        region = kl.region
        conn = region.cell_nodes
        E = element_stiffness(region.grid.hx, region.grid.hy)
        n_c = region.n_cells
        B = kl.modes[:, conn].transpose(1, 0, 2)  # (n_cells, L, 4)
        Vm = kl.means[:, conn].transpose(1, 0, 2)  # (n_cells, k, 4)
        W = np.einsum("clq,qp->clp", B, E)
        # flattened (rows, 4*n_cells) layouts so per-realization products are
        # single BLAS calls after a cellwise rescale
        self.Bf = B.transpose(1, 0, 2).reshape(kl.L, 4 * n_c)
        self.Vf = Vm.transpose(1, 0, 2).reshape(kl.k, 4 * n_c)
        self.Wf = W.transpose(1, 0, 2).reshape(kl.L, 4 * n_c)

    def solve(self, kappa_cells: np.ndarray, load=None) -> np.ndarray:
        """Reduced coefficients (k, L) for one cellwise coefficient field."""
        kl = self.kl
        if kl.L == 0:
            return np.zeros((kl.k, 0))
        Wk = self.Wf * np.repeat(kappa_cells, 4)
        A_red = Wk @ self.Bf.T
        A_red = 0.5 * (A_red + A_red.T)
        rhs = -(Wk @ self.Vf.T)
        if load is not None:
            rhs = rhs + (kl.modes @ load)[:, None]
        try:
            sol = np.linalg.solve(A_red, rhs)
        except np.linalg.LinAlgError:
            warnings.warn(
                f"singular reduced system on neighborhood {kl.neighborhood_id}; "
                "falling back to a least-squares solve",
                stacklevel=2,
            )
            sol = np.linalg.lstsq(A_red, rhs, rcond=None)[0]
        if not np.all(np.isfinite(sol)):
            raise NumericalError(
                f"reduced local solve diverged on neighborhood {kl.neighborhood_id}"
            )
        return sol.T  # (k, L)


def reduced_local_solve(kl: KLModel, ensemble, omega: int, source=None) -> np.ndarray:
    """Reduced local solve for one realization.

    Returns the (k, L) coefficient block; empty when the model is degenerate
    (L = 0).  The system dimension is L regardless of the fine resolution.
    """
    op = _ReducedOperator(kl)
    load = None
    if source is not None:
        load = assemble_load(kl.region, restrict_source(kl.region, source))
    return op.solve(ensemble.restrict(omega, kl.region), load)


def reduced_coefficients(kl: KLModel, ensemble, source=None) -> ReducedCoefficients:
    """Reduced coefficients for every realization of the ensemble."""
    op = _ReducedOperator(kl)
    load = None
    if source is not None:
        load = assemble_load(kl.region, restrict_source(kl.region, source))
    out = np.empty((ensemble.M, kl.k, kl.L))
    for omega in range(ensemble.M):
        out[omega] = op.solve(ensemble.restrict(omega, kl.region), load)
    return ReducedCoefficients(kl.neighborhood_id, out)

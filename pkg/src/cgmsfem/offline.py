"""Offline multiscale basis construction per (neighborhood, cluster) pair.

For each pair: harmonic extensions of discrete boundary deltas on the
cluster-mean coefficient span the local snapshot space; a generalized
eigenproblem (stiffness against a hat-gradient-weighted mass) selects the
dominant modes; multiplying by the partition-of-unity hat yields conforming
basis fields.  All retained fields are gathered into one global sparse
offline space with per-cluster activity masks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError, NumericalError
from .fem import DirichletSolver, assemble_mass, assemble_stiffness, generalized_eig
from .grid import CoarseGrid, FineGrid, Neighborhood, neighborhood, partition_of_unity

OFFLINE, ONLINE = 0, 1


@dataclass(eq=False)
class OfflineSnapshotSpace:
    """Delta-boundary harmonic extensions on one neighborhood.

    snapshots[:, k] equals 1 at the k-th boundary node, 0 at the others, and
    is coefficient-harmonic inside; the column count is the number of fine
    boundary nodes.
    """

    neighborhood_id: int
    cluster: int
    region: object
    coeff: np.ndarray  # (n_cells,) cluster-mean coefficient
    snapshots: np.ndarray  # (n_nodes, n_boundary)


def build_snapshot_space(nb: Neighborhood, coeff, cluster: int = 0) -> OfflineSnapshotSpace:
    """Solve one harmonic extension per fine boundary node of the neighborhood."""
    region = nb.region
    coeff = np.asarray(coeff, dtype=float)
    bdry = region.boundary_local
    try:
        A = assemble_stiffness(region, coeff)
        fields = DirichletSolver(A, bdry).solve(boundary_values=np.eye(len(bdry)))
    except (NumericalError, ValueError) as exc:
        raise NumericalError(
            f"snapshot solves failed (neighborhood {nb.node_id}, cluster {cluster}): {exc}"
        ) from exc
    return OfflineSnapshotSpace(nb.node_id, cluster, region, coeff, fields.T)


def pou_gradient_sq(nb: Neighborhood) -> np.ndarray:
    """|grad chi_i|^2 of the bilinear hat at the fine-cell centers of D_i.

    The hat factors as X(x)Y(y), so the squared gradient at a cell center is
    (Y/Hx)^2 + (X/Hy)^2 with X, Y the 1-D hat values at the center.
    """
    cg = nb.coarse
    region = nb.region
    cx = (np.arange(region.n_cells) % region.ncx) + 0.5
    cy = (np.arange(region.n_cells) // region.ncx) + 0.5
    X = 1.0 - np.abs(cx - cg.rx) / cg.rx
    Y = 1.0 - np.abs(cy - cg.ry) / cg.ry
    return (Y / cg.Hx) ** 2 + (X / cg.Hy) ** 2


@dataclass(eq=False)
class OfflineBasis:
    """Retained eigenpairs of one (neighborhood, cluster) spectral problem.

    fields[k] is the k-th multiscale basis chi_i * phi_k sampled at the
    neighborhood's fine nodes; eigenvalues holds the full ascending spectrum.
    """

    neighborhood_id: int
    cluster: int
    region: object
    eigenvalues: np.ndarray
    fields: np.ndarray  # (retained, n_nodes)

    @property
    def retained(self) -> int:
        return self.fields.shape[0]

    def truncate(self, m: int) -> "OfflineBasis":
        if m > self.retained:
            raise ConfigurationError(
                f"cannot truncate to {m} fields, only {self.retained} retained"
            )
        return replace(self, fields=self.fields[:m])


def spectral_decompose(
    snap: OfflineSnapshotSpace, nb: Neighborhood, chi: np.ndarray, n_basis: int
) -> OfflineBasis:
    """Smallest-eigenvalue modes of the snapshot-space spectral problem.

    The stiffness form uses the cluster-mean coefficient; the mass-like form
    weights it by the squared hat gradient (midpoint value per fine cell).
    Eigenvalues ascend and the retained set is always a prefix.
    """
    region = snap.region
    n_snap = snap.snapshots.shape[1]
    if not 1 <= n_basis <= n_snap:
        raise ConfigurationError(
            f"need 1 <= n_basis <= {n_snap} snapshot functions, got {n_basis}"
        )
    A_h = assemble_stiffness(region, snap.coeff)
    S_h = assemble_mass(region, snap.coeff * pou_gradient_sq(nb))
    Psi = snap.snapshots
    A_bar = Psi.T @ (A_h @ Psi)
    S_bar = Psi.T @ (S_h @ Psi)
    try:
        eig = generalized_eig(A_bar, S_bar)
    except NumericalError as exc:
        raise NumericalError(
            f"spectral problem failed (neighborhood {nb.node_id}, cluster "
            f"{snap.cluster}): {exc}"
        ) from exc
    phi = Psi @ eig.vectors[:, :n_basis]
    fields = (chi[:, None] * phi).T
    return OfflineBasis(snap.neighborhood_id, snap.cluster, region, eig.values, fields)


@dataclass(eq=False)
class OfflineSpace:
    """Global multiscale space: sparse basis columns plus activity metadata.

    Column p is supported on neighborhoods[col_i[p]] and active for
    realization omega iff labels[col_i[p], omega] == col_j[p].  Offline
    columns are ordered (i, j, k) with the eigenindex k fastest, so slicing
    to fewer basis functions is a prefix selection within each block.
    """

    grid: FineGrid
    neighborhoods: tuple
    labels: np.ndarray  # (N, M)
    B: sp.csc_matrix  # (n_fine_nodes, n_cols)
    col_i: np.ndarray
    col_j: np.ndarray
    col_k: np.ndarray
    col_kind: np.ndarray  # OFFLINE or ONLINE
    col_omega: np.ndarray  # tagged realization for online columns, else -1

    @property
    def dim(self) -> int:
        return self.B.shape[1]

    def active_columns(self, omega: int) -> np.ndarray:
        return np.flatnonzero(self.labels[self.col_i, omega] == self.col_j)

    def columns_of(self, i: int, j: int) -> np.ndarray:
        return np.flatnonzero((self.col_i == i) & (self.col_j == j))

    def sliced(self, n_basis: int) -> "OfflineSpace":
        """Keep the first n_basis offline fields per (i, j); online columns stay."""
        keep = np.flatnonzero((self.col_kind == ONLINE) | (self.col_k < n_basis))
        return OfflineSpace(
            self.grid,
            self.neighborhoods,
            self.labels,
            self.B[:, keep].tocsc(),
            self.col_i[keep],
            self.col_j[keep],
            self.col_k[keep],
            self.col_kind[keep],
            self.col_omega[keep],
        )

    def with_columns(self, new_cols) -> "OfflineSpace":
        """Append columns given as (i, j, field_on_region, kind, omega) tuples."""
        data, rows, meta = [], [], []
        for i, j, field, kind, omega in new_cols:
            region = self.neighborhoods[i].region
            field = np.asarray(field, dtype=float)
            if field.shape != (region.n_nodes,):
                raise ValueError("column field does not match its region")
            data.append(field)
            rows.append(region.node_ids)
            meta.append((i, j, kind, omega))
        if not meta:
            return self
        cols = np.repeat(np.arange(len(meta)), [len(r) for r in rows])
        extra = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), cols)),
            shape=(self.grid.n_nodes, len(meta)),
        ).tocsc()
        mi, mj, mkind, momega = (np.array(x) for x in zip(*meta))
        mk = np.full(len(meta), -1)
        return OfflineSpace(
            self.grid,
            self.neighborhoods,
            self.labels,
            sp.hstack([self.B, extra]).tocsc(),
            np.concatenate([self.col_i, mi]),
            np.concatenate([self.col_j, mj]),
            np.concatenate([self.col_k, mk]),
            np.concatenate([self.col_kind, mkind]),
            np.concatenate([self.col_omega, momega]),
        )


def assemble_offline_space(
    bases: dict,
    partitions: dict,
    cg: CoarseGrid,
    n_basis: int | None = None,
) -> OfflineSpace:
    """Gather per-(i, j) bases into the global space.

    `bases` maps (i, j) to an OfflineBasis, `partitions` maps i to its
    ClusterPartition; one basis per pair is required and duplicate pairs are
    impossible by construction of the maps.
    """
    N = cg.n_interior
    M = len(next(iter(partitions.values())).labels)
    labels = np.empty((N, M), dtype=int)
    neighborhoods = tuple(neighborhood(cg, i) for i in range(N))
    data, rows, meta = [], [], []
    for i in range(N):
        part = partitions[i]
        labels[i] = part.labels
        for j in range(part.n_clusters):
            basis = bases[(i, j)]
            m = basis.retained if n_basis is None else min(n_basis, basis.retained)
            region = neighborhoods[i].region
            for k in range(m):
                data.append(basis.fields[k])
                rows.append(region.node_ids)
                meta.append((i, j, k))
    cols = np.repeat(np.arange(len(meta)), [len(r) for r in rows])
    B = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), cols)),
        shape=(cg.fine.n_nodes, len(meta)),
    ).tocsc()
    mi, mj, mk = (np.array(x) for x in zip(*meta))
    return OfflineSpace(
        cg.fine,
        neighborhoods,
        labels,
        B,
        mi,
        mj,
        mk,
        np.full(len(meta), OFFLINE),
        np.full(len(meta), -1),
    )


def save_offline_space(space: OfflineSpace, path) -> None:
    """Serialize a space for reuse (basis columns, metadata, labels)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    cg = space.neighborhoods[0].coarse
    meta = {
        "nx": space.grid.nx,
        "ny": space.grid.ny,
        "Nx": cg.Nx,
        "Ny": cg.Ny,
    }
    (root / "space.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    sp.save_npz(root / "basis.npz", space.B)
    np.savez(
        root / "columns.npz",
        labels=space.labels,
        col_i=space.col_i,
        col_j=space.col_j,
        col_k=space.col_k,
        col_kind=space.col_kind,
        col_omega=space.col_omega,
    )


def load_offline_space(path) -> OfflineSpace:
    root = Path(path)
    meta = json.loads((root / "space.json").read_text())
    fine = FineGrid(int(meta["nx"]), int(meta["ny"]))
    cg = CoarseGrid(fine, int(meta["Nx"]), int(meta["Ny"]))
    B = sp.load_npz(root / "basis.npz").tocsc()
    cols = np.load(root / "columns.npz")
    return OfflineSpace(
        fine,
        tuple(neighborhood(cg, i) for i in range(cg.n_interior)),
        cols["labels"],
        B,
        cols["col_i"],
        cols["col_j"],
        cols["col_k"],
        cols["col_kind"],
        cols["col_omega"],
    )


def build_cluster_basis(
    nb: Neighborhood, mean_field: np.ndarray, n_basis: int, cluster: int = 0
) -> OfflineBasis:
    """Snapshot space + spectral decomposition for one (i, j) pair."""
    snap = build_snapshot_space(nb, mean_field, cluster)
    chi = partition_of_unity(nb.coarse, nb.node_id)
    return spectral_decompose(snap, nb, chi, n_basis)

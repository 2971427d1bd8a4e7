"""Residual-driven online enrichment of the offline space.

Each round evaluates, per (neighborhood, cluster), the local residuals of all
member realizations against the current coarse solution; the realization with
the largest residual gets a new basis field solving the local problem with
the residual as load.  New columns carry the cluster's activity mask, the
coarse problem is re-solved, and the subset errors are traced per round.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, NumericalError
from .fem import (
    DirichletSolver,
    assemble_load,
    assemble_stiffness,
    restrict_source,
)
from .offline import ONLINE, OfflineSpace
from .solver import CoarseSolution, compute_errors, solve

_SKIP_TOL = 1e-14


@dataclass(eq=False)
class ResidualRecord:
    """Residual of one realization's coarse solution on one neighborhood.

    vector[p] = (load - stiffness @ u_ms) at the p-th interior node of the
    neighborhood; norm is the Euclidean norm of that vector.
    """

    neighborhood_id: int
    cluster: int
    omega: int
    vector: np.ndarray
    norm: float


def compute_residual(
    space: OfflineSpace, ensemble, omega: int, i: int, u_field: np.ndarray, f=1.0
) -> ResidualRecord:
    """Residual record for realization omega on neighborhood i."""
    region = ensemble.grid.domain()
    A = assemble_stiffness(region, ensemble.values[omega])
    b = assemble_load(region, restrict_source(region, f))
    r_full = b - A @ u_field
    return _restrict_residual(space, i, omega, r_full)


def _restrict_residual(space, i, omega, r_full) -> ResidualRecord:
    nb = space.neighborhoods[i]
    j = int(space.labels[i, omega])
    vec = r_full[nb.region.node_ids[nb.region.interior_local]]
    return ResidualRecord(i, j, omega, vec, float(np.linalg.norm(vec)))


@dataclass(eq=False)
class OnlineBasis:
    """One enrichment field, tagged by its source realization and round."""

    neighborhood_id: int
    cluster: int
    omega: int
    field: np.ndarray  # (n_region_nodes,), zero on the region boundary
    round_index: int


def solve_online_basis(
    rec: ResidualRecord, ensemble, region, round_index: int = 0
) -> OnlineBasis | None:
    """Local solve with the residual as load; None when there is nothing to do."""
    if rec.norm == 0.0:
        return None
    load = np.zeros(region.n_nodes)
    load[region.interior_local] = rec.vector
    try:
        A = assemble_stiffness(region, ensemble.restrict(rec.omega, region))
        phi = DirichletSolver(A, region.boundary_local).solve(load=load)
    except (NumericalError, ValueError) as exc:
        raise NumericalError(
            f"online solve failed (neighborhood {rec.neighborhood_id}, cluster "
            f"{rec.cluster}, realization {rec.omega}): {exc}"
        ) from exc
    return OnlineBasis(rec.neighborhood_id, rec.cluster, rec.omega, phi, round_index)


def _select(records, selection, theta):
    """Pick the records to enrich: per-cluster argmax or a global top fraction."""
    if selection == "cluster-argmax":
        best = {}
        for rec in records:
            key = (rec.neighborhood_id, rec.cluster)
            if key not in best or rec.norm > best[key].norm:
                best[key] = rec
        return [best[k] for k in sorted(best)]
    if selection == "top-fraction":
        if not (theta and 0.0 < theta <= 1.0):
            raise ConfigurationError("top-fraction selection needs 0 < theta <= 1")
        ranked = sorted(records, key=lambda r: -r.norm)
        n = max(1, int(np.ceil(theta * len(ranked))))
        return ranked[:n]
    raise ConfigurationError(f"unknown selection rule {selection!r}")


def enrich(
    space: OfflineSpace,
    ensemble,
    f,
    reference_fields: np.ndarray,
    *,
    rounds: int,
    mode: str = "per-realization",
    selection: str = "cluster-argmax",
    theta: float | None = None,
    subset=None,
    threads: int = 1,
) -> tuple[OfflineSpace, CoarseSolution, list]:
    """Run `rounds` of enrichment starting from the given space.

    Returns the enlarged space, the final coarse solution and a trace with
    one entry per round (round 0 is the starting offline solution).
    """
    if rounds < 1:
        raise ConfigurationError("need at least one enrichment round")
    region = ensemble.grid.domain()
    b_fine = assemble_load(region, restrict_source(region, f))

    solution = solve(space, ensemble, f, mode=mode, threads=threads)
    trace = [_trace_row(0, space, solution, reference_fields, ensemble, subset)]

    for rnd in range(1, rounds + 1):
        records = []
        for omega in range(ensemble.M):
            A = assemble_stiffness(region, ensemble.values[omega])
            r_full = b_fine - A @ solution.fields[omega]
            for i in range(len(space.neighborhoods)):
                records.append(_restrict_residual(space, i, omega, r_full))
        chosen = _select(records, selection, theta)
        scale = max((r.norm for r in records), default=0.0)
        new_cols = []
        for rec in chosen:
            if rec.norm <= _SKIP_TOL * max(scale, 1.0):
                continue
            basis = solve_online_basis(
                rec, ensemble, space.neighborhoods[rec.neighborhood_id].region, rnd
            )
            if basis is None:
                continue
            new_cols.append(
                (rec.neighborhood_id, rec.cluster, basis.field, ONLINE, rec.omega)
            )
        if not new_cols:
            warnings.warn(
                f"enrichment round {rnd}: all residuals negligible, stopping early",
                stacklevel=2,
            )
            break
        space = space.with_columns(new_cols)
        solution = solve(space, ensemble, f, mode=mode, threads=threads)
        trace.append(_trace_row(rnd, space, solution, reference_fields, ensemble, subset))
    return space, solution, trace


def _trace_row(rnd, space, solution, reference_fields, ensemble, subset):
    report = compute_errors(reference_fields, solution.fields, ensemble, subset)
    return {
        "round": rnd,
        "dofs": space.dim,
        "e1_S": report.e1_S,
        "e2_S": report.e2_S,
        "rel_e1_S": report.rel_e1_S,
        "rel_e2_S": report.rel_e2_S,
        "e1_omega": report.e1_omega,
        "rel_e1_omega": report.rel_e1_omega,
    }

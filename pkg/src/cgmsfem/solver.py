"""Global coarse couplings and error metrics.

Two couplings: solve per realization in that realization's active columns,
or one ensemble-Galerkin system over all columns where cluster activity masks
induce the weighted intersections.  Both downscale to fine-grid fields by
linear superposition of the stored basis columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._util import pmap
from .exceptions import ConfigurationError, NumericalError
from .fem import assemble_load, assemble_mass, assemble_stiffness, restrict_source
from .offline import OfflineSpace

_DENSE_LIMIT = 5000


def _solve_spd(G: np.ndarray, b: np.ndarray, space=None, cols=None) -> np.ndarray:
    try:
        c, low = scipy.linalg.cho_factor(G)
        return scipy.linalg.cho_solve((c, low), b)
    except np.linalg.LinAlgError as exc:
        msg = f"coarse system is not SPD: {exc}"
        if space is not None and cols is not None:
            w, V = np.linalg.eigh(0.5 * (G + G.T))
            worst = np.abs(V[:, 0])
            bad = cols[np.argsort(worst)[-3:]]
            pairs = sorted({(int(space.col_i[p]), int(space.col_j[p])) for p in bad})
            msg += f"; dominant null-vector weight on neighborhoods/clusters {pairs}"
        raise NumericalError(msg) from exc


def downscale(space: OfflineSpace, cols: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Fine-grid field from coarse coefficients on the given columns."""
    if len(cols) == 0:
        return np.zeros(space.grid.n_nodes)
    return space.B[:, cols] @ coeffs


@dataclass(eq=False)
class CoarseSolution:
    """Coarse solve output: coefficients plus downscaled per-realization fields."""

    mode: str  # "per-realization" | "ensemble"
    fields: np.ndarray  # (M, n_fine_nodes)
    coefficients: object  # dict omega -> vector, or one global vector
    columns: object  # dict omega -> active column ids, or global column ids


def _load_vector(space: OfflineSpace, f) -> np.ndarray:
    region = space.grid.domain()
    return assemble_load(region, restrict_source(region, f))


def solve_per_realization(
    space: OfflineSpace, ensemble, omega: int, f=1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Galerkin solve for one realization in its active columns.

    Returns (coefficients, downscaled field, active column ids).
    """
    b_fine = _load_vector(space, f)
    A = assemble_stiffness(space.grid.domain(), ensemble.values[omega])
    return _solve_one(space, A, b_fine, omega)


def _solve_one(space, A_fine, b_fine, omega):
    cols = space.active_columns(omega)
    if len(cols) == 0:
        raise NumericalError(f"realization {omega} has no active basis columns")
    Bc = space.B[:, cols]
    G = (Bc.T @ (A_fine @ Bc)).toarray()
    b = Bc.T @ b_fine
    c = _solve_spd(0.5 * (G + G.T), b, space, cols)
    return c, Bc @ c, cols


def solve_all_realizations(
    space: OfflineSpace, ensemble, f=1.0, threads: int = 1
) -> CoarseSolution:
    """Per-realization coupling over the whole ensemble."""
    b_fine = _load_vector(space, f)

    def one(omega):
        A = assemble_stiffness(space.grid.domain(), ensemble.values[omega])
        return _solve_one(space, A, b_fine, omega)

    results = pmap(one, range(ensemble.M), threads)
    fields = np.stack([r[1] for r in results])
    return CoarseSolution(
        "per-realization",
        fields,
        {w: r[0] for w, r in enumerate(results)},
        {w: r[2] for w, r in enumerate(results)},
    )


def ensemble_system(space: OfflineSpace, ensemble, f=1.0, threads: int = 1):
    """Weighted ensemble Galerkin matrix and load over all columns.

    Entry (p, q) accumulates w_omega a(omega; Phi_p, Phi_q) over realizations
    for which both columns are active; the cluster activity masks induce the
    intersection weights.
    """
    n = space.dim
    b_fine = _load_vector(space, f)
    G = np.zeros((n, n))
    b = np.zeros(n)

    def blocks(omega):
        cols = space.active_columns(omega)
        A = assemble_stiffness(space.grid.domain(), ensemble.values[omega])
        Bc = space.B[:, cols]
        return cols, (Bc.T @ (A @ Bc)).toarray(), Bc.T @ b_fine

    for omega, (cols, Gw, bw) in enumerate(pmap(blocks, range(ensemble.M), threads)):
        w = ensemble.weights[omega]
        G[np.ix_(cols, cols)] += w * Gw
        b[cols] += w * bw
    return G, b


def solve_ensemble_galerkin(
    space: OfflineSpace, ensemble, f=1.0, threads: int = 1
) -> CoarseSolution:
    """One global Galerkin solve; singleton clusters make the system block
    diagonal and reproduce the per-realization coupling."""
    if ensemble.M < 1:
        raise ValueError("ensemble is empty")
    n = space.dim
    G, b = ensemble_system(space, ensemble, f, threads)
    G = 0.5 * (G + G.T)
    if n <= _DENSE_LIMIT:
        c = _solve_spd(G, b, space, np.arange(n))
    else:
        c = spla.spsolve(sp.csc_matrix(G), b)
        if not np.all(np.isfinite(c)):
            raise NumericalError("sparse ensemble solve produced non-finite values")
    fields = np.empty((ensemble.M, space.grid.n_nodes))
    for omega in range(ensemble.M):
        cols = space.active_columns(omega)
        fields[omega] = downscale(space, cols, c[cols])
    return CoarseSolution("ensemble", fields, c, np.arange(n))


def solve(space: OfflineSpace, ensemble, f=1.0, mode="per-realization", threads=1):
    if mode == "per-realization":
        return solve_all_realizations(space, ensemble, f, threads)
    if mode == "ensemble":
        return solve_ensemble_galerkin(space, ensemble, f, threads)
    raise ConfigurationError(f"unknown coupling mode {mode!r}")


def energy_error(ensemble, omega: int, u_ref: np.ndarray, u_approx: np.ndarray) -> float:
    """a(omega)-energy norm of the difference field."""
    A = assemble_stiffness(ensemble.grid.domain(), ensemble.values[omega])
    d = u_ref - u_approx
    return float(np.sqrt(max(d @ (A @ d), 0.0)))


@dataclass(eq=False)
class ErrorReport:
    """The four ensemble error metrics, raw and normalized by the reference.

    e1 metrics aggregate per-realization L2 errors (weighted over the whole
    ensemble, unweighted over the subset); e2 metrics take the L2 norm of the
    aggregated difference field, so sign cancellations reduce them.
    """

    e1_omega: float
    e2_omega: float
    e1_S: float
    e2_S: float
    rel_e1_omega: float
    rel_e2_omega: float
    rel_e1_S: float
    rel_e2_S: float
    subset: tuple
    energy: np.ndarray | None = field(default=None)

    def as_dict(self) -> dict:
        d = {
            "e1_omega": self.e1_omega,
            "e2_omega": self.e2_omega,
            "e1_S": self.e1_S,
            "e2_S": self.e2_S,
            "rel_e1_omega": self.rel_e1_omega,
            "rel_e2_omega": self.rel_e2_omega,
            "rel_e1_S": self.rel_e1_S,
            "rel_e2_S": self.rel_e2_S,
            "subset": list(self.subset),
        }
        if self.energy is not None:
            d["energy"] = [float(x) for x in self.energy]
        return d


def _ratio(raw: float, denom: float) -> float:
    if denom > 0.0:
        return raw / denom
    return 0.0 if raw == 0.0 else float("inf")


def compute_errors(
    reference: np.ndarray,
    approx: np.ndarray,
    ensemble,
    subset=None,
) -> ErrorReport:
    """Error metrics between fine reference fields and downscaled fields.

    subset defaults to the first min(10, M) realizations.  Spatial integrals
    use the fine mass matrix; relative values normalize by the same metric
    applied to the reference fields.
    """
    reference = np.asarray(reference, dtype=float)
    approx = np.asarray(approx, dtype=float)
    n = ensemble.grid.n_nodes
    if reference.shape != (ensemble.M, n) or approx.shape != (ensemble.M, n):
        raise ConfigurationError(
            f"field shapes {reference.shape}/{approx.shape} do not match the "
            f"ensemble grid ({ensemble.M}, {n})"
        )
    if subset is None:
        subset = tuple(range(min(10, ensemble.M)))
    subset = tuple(int(s) for s in subset)
    if any(not 0 <= s < ensemble.M for s in subset):
        raise ConfigurationError("error subset contains invalid realization ids")

    W = assemble_mass(ensemble.grid.domain())
    w = ensemble.weights

    def l2(v):
        return float(np.sqrt(max(v @ (W @ v), 0.0)))

    D = reference - approx
    l2sq = np.clip(np.einsum("mn,mn->m", D, (W @ D.T).T), 0.0, None)
    ref_sq = np.clip(np.einsum("mn,mn->m", reference, (W @ reference.T).T), 0.0, None)
    sub = np.asarray(subset)

    e1_omega = float(np.sqrt(w @ l2sq))
    e2_omega = l2(w @ D)
    e1_S = float(np.sqrt(l2sq[sub].sum()))
    e2_S = l2(D[sub].sum(axis=0))

    return ErrorReport(
        e1_omega,
        e2_omega,
        e1_S,
        e2_S,
        _ratio(e1_omega, float(np.sqrt(w @ ref_sq))),
        _ratio(e2_omega, l2(w @ reference)),
        _ratio(e1_S, float(np.sqrt(ref_sq[sub].sum()))),
        _ratio(e2_S, l2(reference[sub].sum(axis=0))),
        subset,
    )

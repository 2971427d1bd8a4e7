"""Random coefficient ensembles: generators and file ingestion.

Two built-in media: a high-contrast inclusion/channel medium whose objects
jitter from realization to realization, and a log-coefficient medium driven
by three standard normal variables through fixed sine-ratio spatial factors.
Ensembles can also be saved to / loaded from a simple directory format
(JSON metadata plus one raw float64 binary per realization).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import STREAM_INCLUSION, STREAM_LOGSINE, substream
from .exceptions import IngestionError
from .grid import CoarseGrid, FineGrid

_WEIGHT_TOL = 1e-12


@dataclass(eq=False)
class PermeabilityEnsemble:
    """M cellwise-positive coefficient fields on one fine grid, with weights."""

    grid: FineGrid
    values: np.ndarray  # (M, n_cells)
    weights: np.ndarray  # (M,), sums to 1

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_cells:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid with "
                f"{self.grid.n_cells} cells"
            )
        if self.weights.shape != (self.values.shape[0],):
            raise ValueError("weights length must equal the realization count")
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0.0):
            raise ValueError("coefficient fields must be finite and positive")
        if abs(self.weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, expected 1")

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def restrict(self, omega: int, region) -> np.ndarray:
        """Cellwise values of realization omega on a region."""
        return self.values[omega][region.cell_ids]

    @classmethod
    def with_uniform_weights(cls, grid: FineGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        M = values.shape[0]
        return cls(grid, values, np.full(M, 1.0 / M))


@dataclass(frozen=True)
class Inclusion:
    """Axis-aligned object in unit-square coordinates (center plus size)."""

    cx: float
    cy: float
    width: float
    height: float
    kind: str = "rect"  # "rect" | "ellipse"

    def __post_init__(self):
        if self.kind not in ("rect", "ellipse"):
            raise ValueError(f"unknown inclusion kind {self.kind!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("inclusion size must be positive")


@dataclass(frozen=True)
class InclusionMediumConfig:
    """High-contrast medium: background plus jittered inclusions and channels.

    Each object is translated per realization by an independent integer
    jitter, uniform in [-jitter, jitter]^2 fine cells, and assigned a
    contrast drawn uniform in log between the contrast bounds.
    """

    background: float = 1.0
    inclusions: tuple[Inclusion, ...] = ()
    channels: tuple[Inclusion, ...] = ()
    contrast: tuple[float, float] = (1e3, 1e4)
    jitter: int = 0  # fine cells
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.contrast
        if not (0.0 < self.background < lo <= hi):
            raise ValueError(
                f"need 0 < background < contrast range, got {self.background} "
                f"and {self.contrast}"
            )
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")

    @property
    def objects(self) -> tuple[Inclusion, ...]:
        return self.inclusions + self.channels


def case1_config(fine: FineGrid, coarse: CoarseGrid | None = None, seed: int = 0):
    """Default inclusion/channel layout used by the bundled experiments.

    Eight rectangular inclusions plus two horizontal channel segments on
    background 1 with contrasts in [1e3, 1e4].  Objects sit away from the
    domain boundary so that jitter never pushes high-contrast material into
    the outermost coarse ring, where the interior-node basis has no support
    to spare; the jitter amplitude is 6% of the domain width in fine cells.
    """
    incl = tuple(
        Inclusion(cx, cy, w, h)
        for cx, cy, w, h in [
            (0.28, 0.30, 0.10, 0.05),
            (0.50, 0.26, 0.06, 0.08),
            (0.72, 0.32, 0.08, 0.05),
            (0.30, 0.52, 0.05, 0.09),
            (0.55, 0.50, 0.10, 0.06),
            (0.74, 0.56, 0.05, 0.08),
            (0.36, 0.72, 0.09, 0.05),
            (0.62, 0.74, 0.06, 0.06),
        ]
    )
    chans = (
        Inclusion(0.40, 0.38, 0.36, 0.03),
        Inclusion(0.60, 0.62, 0.40, 0.03),
    )
    del coarse  # geometry is resolution-independent; kept for API symmetry
    jitter = max(1, round(0.06 * fine.nx))
    return InclusionMediumConfig(
        background=1.0,
        inclusions=incl,
        channels=chans,
        contrast=(1e3, 1e4),
        jitter=jitter,
        seed=seed,
    )


def _paint(field_cells, centers, grid, obj: Inclusion, jx: int, jy: int, value: float):
    dx, dy = obj.cx + jx * grid.hx, obj.cy + jy * grid.hy
    X, Y = centers[:, 0], centers[:, 1]
    # half-cell slack keeps the rasterized footprint stable under the
    # whole-cell translations used for jitter
    eps = 1e-12
    if obj.kind == "rect":
        mask = (np.abs(X - dx) <= obj.width / 2 + eps) & (
            np.abs(Y - dy) <= obj.height / 2 + eps
        )
    else:
        mask = ((X - dx) / (obj.width / 2)) ** 2 + (
            (Y - dy) / (obj.height / 2)
        ) ** 2 <= 1.0 + eps
    if not mask.any():
        warnings.warn(
            f"inclusion at ({obj.cx:.3f},{obj.cy:.3f}) left the domain after "
            "jitter; skipped",
            stacklevel=3,
        )
        return
    field_cells[mask] = value


def generate_inclusion_medium(
    grid: FineGrid, cfg: InclusionMediumConfig, M: int
) -> PermeabilityEnsemble:
    """Generate M realizations of the inclusion/channel medium."""
    if M < 1:
        raise ValueError("need at least one realization")
    centers = grid.cell_centers()
    lo, hi = np.log(cfg.contrast[0]), np.log(cfg.contrast[1])
    values = np.empty((M, grid.n_cells))
    for i in range(M):
        rng = substream(cfg.seed, STREAM_INCLUSION, i)
        cells = np.full(grid.n_cells, cfg.background)
        for obj in cfg.objects:
            jx, jy = rng.integers(-cfg.jitter, cfg.jitter + 1, size=2)
            draw = rng.uniform(lo, hi)
            contrast = cfg.contrast[0] if lo == hi else float(np.exp(draw))
            _paint(cells, centers, grid, obj, int(jx), int(jy), contrast)
        values[i] = cells
    return PermeabilityEnsemble.with_uniform_weights(grid, values)


def logsine_factors(x, y) -> np.ndarray:
    """The three fixed sine-ratio spatial factors, stacked along axis 0.

    Each factor has the form (2 + sin sin)/(2 + sin sin) and therefore takes
    values in [1/3, 3].
    """
    pi = np.pi
    g1 = (2 + np.sin(7 * pi * x) * np.sin(8 * pi * y)) / (
        2 + np.sin(9 * pi * x) * np.sin(7 * pi * y)
    )
    g2 = (2 + np.sin(13 * pi * x) * np.sin(11 * pi * y)) / (
        2 + np.sin(11 * pi * x) * np.sin(13 * pi * y)
    )
    g3 = (2 + np.sin(12 * pi * x) * np.sin(14 * pi * y)) / (
        2 + np.sin(15 * pi * x) * np.sin(15 * pi * y)
    )
    return np.stack([g1, g2, g3])


def generate_logsine_medium(grid: FineGrid, M: int, seed: int = 0) -> PermeabilityEnsemble:
    """kappa = exp(0.1 + sum_k g_k(x) xi_k) with xi_k iid standard normal.

    Evaluated at fine-cell centers; realization i depends only on (seed, i).
    """
    if M < 1:
        raise ValueError("need at least one realization")
    centers = grid.cell_centers()
    g = logsine_factors(centers[:, 0], centers[:, 1])  # (3, n_cells)
    values = np.empty((M, grid.n_cells))
    for i in range(M):
        xi = substream(seed, STREAM_LOGSINE, i).standard_normal(3)
        values[i] = np.exp(0.1 + xi @ g)
    return PermeabilityEnsemble.with_uniform_weights(grid, values)


def save_ensemble(ens: PermeabilityEnsemble, path) -> None:
    """Write an ensemble directory: ensemble.json + one .bin per realization."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "nx": ens.grid.nx,
        "ny": ens.grid.ny,
        "M": ens.M,
        "dtype": "<f8",
        "weights": [float(w) for w in ens.weights],
    }
    (root / "ensemble.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    for i in range(ens.M):
        data = np.ascontiguousarray(ens.values[i], dtype="<f8")
        (root / f"realization_{i:04d}.bin").write_bytes(data.tobytes())


def load_ensemble(path) -> PermeabilityEnsemble:
    """Read an ensemble directory; validates sizes, weights and positivity."""
    root = Path(path)
    meta_path = root / "ensemble.json"
    if not meta_path.is_file():
        raise IngestionError(f"missing metadata file {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        nx, ny, M = int(meta["nx"]), int(meta["ny"]), int(meta["M"])
        dtype = np.dtype(meta["dtype"])
        weights = np.asarray(meta["weights"], dtype=float)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise IngestionError(f"malformed ensemble metadata: {exc}") from exc
    if dtype != np.dtype("<f8"):
        raise IngestionError(f"unsupported dtype {meta['dtype']!r}")
    if weights.shape != (M,) or abs(weights.sum() - 1.0) > _WEIGHT_TOL:
        raise IngestionError("weights missing, wrong length, or not summing to 1")
    grid = FineGrid(nx, ny)
    values = np.empty((M, grid.n_cells))
    for i in range(M):
        p = root / f"realization_{i:04d}.bin"
        if not p.is_file():
            raise IngestionError(f"missing realization file {p.name}")
        raw = p.read_bytes()
        if len(raw) != grid.n_cells * 8:
            raise IngestionError(
                f"{p.name} holds {len(raw)} bytes, expected {grid.n_cells * 8}"
            )
        values[i] = np.frombuffer(raw, dtype="<f8")
    if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
        raise IngestionError("coefficient files contain nonpositive or non-finite cells")
    return PermeabilityEnsemble(grid, values, weights)

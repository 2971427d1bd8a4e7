"""Structured fine/coarse grid pair on the unit square.

The fine grid carries the discrete coefficient fields and all solves; the
coarse grid defines interior coarse nodes, their neighborhoods (2x2 blocks of
coarse cells), oversampled extensions of those neighborhoods, and the bilinear
hat partition of unity used to conform local bases globally.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class FineGrid:
    """Uniform rectangular grid with nx-by-ny cells on [0,1]^2.

    Nodes and cells are numbered row-major: node (ix, iy) -> iy*(nx+1)+ix,
    cell (cx, cy) -> cy*nx+cx.
    """

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigurationError(
                f"fine grid needs at least 2 cells per axis, got {self.nx}x{self.ny}"
            )

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def domain(self) -> "Region":
        """The whole unit square as a region."""
        return Region(self, 0, self.nx, 0, self.ny)

    def node_coords(self) -> np.ndarray:
        return self.domain().node_coords()

    def cell_centers(self) -> np.ndarray:
        return self.domain().cell_centers()


@dataclass(frozen=True)
class Region:
    """Axis-aligned block of fine cells, with local row-major numbering.

    Bounds are fine-node indices, inclusive: the region covers nodes
    [ix0, ix1] x [iy0, iy1] and the cells between them.  Local node
    l = ly*(ncx+1)+lx; local cell c = cy*ncx+cx.
    """

    grid: FineGrid
    ix0: int
    ix1: int
    iy0: int
    iy1: int

    def __post_init__(self):
        ok = (
            0 <= self.ix0 < self.ix1 <= self.grid.nx
            and 0 <= self.iy0 < self.iy1 <= self.grid.ny
        )
        if not ok:
            raise ConfigurationError(
                f"region ({self.ix0},{self.ix1})x({self.iy0},{self.iy1}) out of "
                f"range for a {self.grid.nx}x{self.grid.ny} grid"
            )

    @property
    def ncx(self) -> int:
        return self.ix1 - self.ix0

    @property
    def ncy(self) -> int:
        return self.iy1 - self.iy0

    @property
    def n_nodes(self) -> int:
        return (self.ncx + 1) * (self.ncy + 1)

    @property
    def n_cells(self) -> int:
        return self.ncx * self.ncy

    @cached_property
    def node_ids(self) -> np.ndarray:
        """Global fine-node id for every local node (row-major)."""
        ix = np.arange(self.ix0, self.ix1 + 1)
        iy = np.arange(self.iy0, self.iy1 + 1)
        return (iy[:, None] * (self.grid.nx + 1) + ix[None, :]).ravel()

    @cached_property
    def cell_ids(self) -> np.ndarray:
        """Global fine-cell id for every local cell (row-major)."""
        cx = np.arange(self.ix0, self.ix1)
        cy = np.arange(self.iy0, self.iy1)
        return (cy[:, None] * self.grid.nx + cx[None, :]).ravel()

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 4) local node ids per cell, ordered ll, lr, ul, ur."""
        w = self.ncx + 1
        cx = np.arange(self.ncx)
        cy = np.arange(self.ncy)
        ll = (cy[:, None] * w + cx[None, :]).ravel()
        return np.column_stack([ll, ll + 1, ll + w, ll + w + 1])

    @cached_property
    def boundary_local(self) -> np.ndarray:
        """Local indices of nodes on the region's boundary rectangle."""
        lx = np.arange(self.n_nodes) % (self.ncx + 1)
        ly = np.arange(self.n_nodes) // (self.ncx + 1)
        on = (lx == 0) | (lx == self.ncx) | (ly == 0) | (ly == self.ncy)
        return np.flatnonzero(on)

    @cached_property
    def interior_local(self) -> np.ndarray:
        lx = np.arange(self.n_nodes) % (self.ncx + 1)
        ly = np.arange(self.n_nodes) // (self.ncx + 1)
        inside = (lx > 0) & (lx < self.ncx) & (ly > 0) & (ly < self.ncy)
        return np.flatnonzero(inside)

    def node_coords(self) -> np.ndarray:
        x = np.arange(self.ix0, self.ix1 + 1) * self.grid.hx
        y = np.arange(self.iy0, self.iy1 + 1) * self.grid.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def cell_centers(self) -> np.ndarray:
        x = (np.arange(self.ix0, self.ix1) + 0.5) * self.grid.hx
        y = (np.arange(self.iy0, self.iy1) + 0.5) * self.grid.hy
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def contains(self, other: "Region") -> bool:
        return (
            self.grid == other.grid
            and self.ix0 <= other.ix0
            and other.ix1 <= self.ix1
            and self.iy0 <= other.iy0
            and other.iy1 <= self.iy1
        )

    def local_nodes_of(self, sub: "Region") -> np.ndarray:
        """Local indices (in self) of all nodes of a contained subregion."""
        if not self.contains(sub):
            raise ConfigurationError("subregion is not contained in region")
        lx = np.arange(sub.ix0 - self.ix0, sub.ix1 - self.ix0 + 1)
        ly = np.arange(sub.iy0 - self.iy0, sub.iy1 - self.iy0 + 1)
        return (ly[:, None] * (self.ncx + 1) + lx[None, :]).ravel()

    def local_cells_of(self, sub: "Region") -> np.ndarray:
        """Local cell indices (in self) of all cells of a contained subregion."""
        if not self.contains(sub):
            raise ConfigurationError("subregion is not contained in region")
        cx = np.arange(sub.ix0 - self.ix0, sub.ix1 - self.ix0)
        cy = np.arange(sub.iy0 - self.iy0, sub.iy1 - self.iy0)
        return (cy[:, None] * self.ncx + cx[None, :]).ravel()


@dataclass(frozen=True)
class CoarseGrid:
    """Coarse partition with Nx-by-Ny cells; the fine grid must refine it.

    Interior coarse nodes are numbered row-major over (IX, IY) with
    IX in 1..Nx-1 and IY in 1..Ny-1; only these carry neighborhoods.
    """

    fine: FineGrid
    Nx: int
    Ny: int

    def __post_init__(self):
        if self.Nx < 2 or self.Ny < 2:
            raise ConfigurationError(
                f"coarse grid needs at least 2 cells per axis, got {self.Nx}x{self.Ny}"
            )
        if self.fine.nx % self.Nx or self.fine.ny % self.Ny:
            raise ConfigurationError(
                f"fine grid {self.fine.nx}x{self.fine.ny} is not a refinement of "
                f"coarse grid {self.Nx}x{self.Ny}"
            )

    @property
    def rx(self) -> int:
        """Fine cells per coarse cell along x."""
        return self.fine.nx // self.Nx

    @property
    def ry(self) -> int:
        return self.fine.ny // self.Ny

    @property
    def Hx(self) -> float:
        return 1.0 / self.Nx

    @property
    def Hy(self) -> float:
        return 1.0 / self.Ny

    @property
    def n_interior(self) -> int:
        return (self.Nx - 1) * (self.Ny - 1)

    def interior_ij(self, i: int) -> tuple[int, int]:
        """Coarse-lattice coordinates (IX, IY) of interior coarse node i."""
        if not 0 <= i < self.n_interior:
            raise ConfigurationError(
                f"coarse node id {i} is not an interior node (N={self.n_interior})"
            )
        return i % (self.Nx - 1) + 1, i // (self.Nx - 1) + 1

    def interior_coords(self, i: int) -> tuple[float, float]:
        IX, IY = self.interior_ij(i)
        return IX * self.Hx, IY * self.Hy


def build_grids(nx: int, ny: int, Nx: int, Ny: int) -> tuple[FineGrid, CoarseGrid]:
    """Construct a consistent fine/coarse grid pair on the unit square."""
    fine = FineGrid(nx, ny)
    return fine, CoarseGrid(fine, Nx, Ny)


@dataclass(frozen=True)
class Neighborhood:
    """Union of the (up to 4) coarse cells sharing one interior coarse node.

    For interior coarse nodes this is always a full 2x2 block of coarse
    cells; the region spans it on the fine grid.
    """

    coarse: CoarseGrid
    node_id: int
    region: Region
    coarse_cells: tuple[int, ...]

    @property
    def center(self) -> tuple[float, float]:
        return self.coarse.interior_coords(self.node_id)

    @property
    def nodes(self) -> np.ndarray:
        """Global fine-node ids of all nodes in the neighborhood."""
        return self.region.node_ids

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.region.node_ids[self.region.interior_local]

    @property
    def boundary_nodes(self) -> np.ndarray:
        return self.region.node_ids[self.region.boundary_local]


@dataclass(frozen=True)
class OversampledNeighborhood:
    """A neighborhood extended by whole fine-cell layers, clipped to [0,1]^2."""

    base: Neighborhood
    layers: int
    region: Region

    @property
    def node_id(self) -> int:
        return self.base.node_id

    @property
    def boundary_nodes(self) -> np.ndarray:
        return self.region.node_ids[self.region.boundary_local]


def neighborhood(cg: CoarseGrid, i: int) -> Neighborhood:
    """Neighborhood of interior coarse node i (rejects out-of-range ids)."""
    IX, IY = cg.interior_ij(i)
    region = Region(
        cg.fine,
        (IX - 1) * cg.rx,
        (IX + 1) * cg.rx,
        (IY - 1) * cg.ry,
        (IY + 1) * cg.ry,
    )
    cells = tuple(
        (IY - 1 + dy) * cg.Nx + (IX - 1 + dx) for dy in (0, 1) for dx in (0, 1)
    )
    return Neighborhood(cg, i, region, cells)


def oversample(n: Neighborhood, layers: int) -> OversampledNeighborhood:
    """Extend a neighborhood by `layers` fine cells per side, clipped."""
    if layers < 0:
        raise ConfigurationError(f"oversampling layers must be >= 0, got {layers}")
    g = n.region.grid
    region = Region(
        g,
        max(n.region.ix0 - layers, 0),
        min(n.region.ix1 + layers, g.nx),
        max(n.region.iy0 - layers, 0),
        min(n.region.iy1 + layers, g.ny),
    )
    return OversampledNeighborhood(n, layers, region)


def partition_of_unity(cg: CoarseGrid, i: int) -> np.ndarray:
    """Bilinear hat of coarse node i sampled at its neighborhood's fine nodes.

    Equals 1 at the coarse node, 0 on the neighborhood boundary, and the hats
    of all interior coarse nodes sum to 1 away from the domain boundary ring.
    """
    nb = neighborhood(cg, i)
    # integer offsets from the neighborhood corner keep the hat values exact
    lx = np.arange(nb.region.n_nodes) % (nb.region.ncx + 1)
    ly = np.arange(nb.region.n_nodes) // (nb.region.ncx + 1)
    tx = 1.0 - np.abs(lx - cg.rx) / cg.rx
    ty = 1.0 - np.abs(ly - cg.ry) / cg.ry
    return tx * ty

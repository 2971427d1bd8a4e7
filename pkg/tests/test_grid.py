import numpy as np
import pytest

from cgmsfem.exceptions import ConfigurationError
from cgmsfem.grid import (
    Region,
    build_grids,
    neighborhood,
    oversample,
    partition_of_unity,
)


def test_smallest_valid_grid():
    fine, cg = build_grids(4, 4, 2, 2)
    assert cg.n_interior == 1
    assert cg.interior_coords(0) == (0.5, 0.5)


def test_interior_count_formula():
    _, cg = build_grids(100, 100, 10, 10)
    assert cg.n_interior == 81


def test_non_divisible_refinement_rejected():
    with pytest.raises(ConfigurationError):
        build_grids(10, 10, 3, 3)


def test_grid_minimum_size():
    with pytest.raises(ConfigurationError):
        build_grids(1, 4, 1, 2)


def test_neighborhood_of_single_interior_node_is_whole_domain():
    fine, cg = build_grids(8, 8, 2, 2)
    nb = neighborhood(cg, 0)
    assert (nb.region.ix0, nb.region.ix1, nb.region.iy0, nb.region.iy1) == (0, 8, 0, 8)
    dom = fine.domain()
    assert np.array_equal(np.sort(nb.boundary_nodes), dom.node_ids[dom.boundary_local])


def test_neighborhood_geometry_first_node():
    _, cg = build_grids(100, 100, 10, 10)
    nb = neighborhood(cg, 0)  # coarse lattice node (1, 1)
    coords = nb.region.node_coords()
    assert coords[:, 0].min() == 0.0 and abs(coords[:, 0].max() - 0.2) < 1e-15
    assert coords[:, 1].min() == 0.0 and abs(coords[:, 1].max() - 0.2) < 1e-15
    assert nb.coarse_cells == (0, 1, 10, 11)


def test_interior_fine_node_count():
    # enumerate fine nodes strictly inside D_i for r=10 independently
    fine, cg = build_grids(100, 100, 10, 10)
    nb = neighborhood(cg, 45)
    coords = fine.node_coords()
    x0, x1 = nb.region.ix0 * fine.hx, nb.region.ix1 * fine.hx
    y0, y1 = nb.region.iy0 * fine.hy, nb.region.iy1 * fine.hy
    eps = 1e-12
    strictly_inside = (
        (coords[:, 0] > x0 + eps)
        & (coords[:, 0] < x1 - eps)
        & (coords[:, 1] > y0 + eps)
        & (coords[:, 1] < y1 - eps)
    )
    assert strictly_inside.sum() == (2 * 10 - 1) ** 2 == 361
    assert len(nb.interior_nodes) == 361
    assert np.array_equal(np.sort(nb.interior_nodes), np.flatnonzero(strictly_inside))


def test_node_sets_partition():
    _, cg = build_grids(40, 40, 4, 4)
    nb = neighborhood(cg, 2)
    interior = set(nb.interior_nodes.tolist())
    boundary = set(nb.boundary_nodes.tolist())
    assert not interior & boundary
    assert interior | boundary == set(nb.nodes.tolist())


def test_boundary_node_id_rejected():
    _, cg = build_grids(40, 40, 4, 4)
    for bad in (-1, cg.n_interior, cg.n_interior + 5):
        with pytest.raises(ConfigurationError):
            neighborhood(cg, bad)


def test_oversample_zero_layers_is_identity():
    _, cg = build_grids(40, 40, 4, 4)
    nb = neighborhood(cg, 4)
    ovs = oversample(nb, 0)
    assert np.array_equal(ovs.region.node_ids, nb.region.node_ids)
    assert np.array_equal(ovs.boundary_nodes, nb.boundary_nodes)


def test_oversample_clipping_one_sided():
    _, cg = build_grids(40, 40, 4, 4)
    nb = neighborhood(cg, 0)  # touches the lower-left domain corner
    ovs = oversample(nb, cg.rx)
    r = ovs.region
    assert (r.ix0, r.iy0) == (0, 0)  # clipped sides
    assert (r.ix1, r.iy1) == (nb.region.ix1 + cg.rx, nb.region.iy1 + cg.ry)


def test_oversample_interior_extension_arithmetic():
    _, cg = build_grids(100, 100, 10, 10)
    nb = neighborhood(cg, 40)  # central node (5, 5), 20x20 fine cells
    assert (nb.region.ncx, nb.region.ncy) == (20, 20)
    ovs = oversample(nb, 4)
    assert (ovs.region.ncx, ovs.region.ncy) == (28, 28)


def test_oversample_negative_rejected():
    _, cg = build_grids(40, 40, 4, 4)
    with pytest.raises(ConfigurationError):
        oversample(neighborhood(cg, 0), -1)


def test_partition_of_unity_values():
    _, cg = build_grids(40, 40, 4, 4)
    i = 4  # central coarse node
    nb = neighborhood(cg, i)
    chi = partition_of_unity(cg, i)
    # 1 at the coarse node itself
    center_local = np.flatnonzero(nb.region.node_ids == nb.region.node_ids[0] + 0)
    coords = nb.region.node_coords()
    xc, yc = nb.center
    at_center = np.flatnonzero(
        (np.abs(coords[:, 0] - xc) < 1e-14) & (np.abs(coords[:, 1] - yc) < 1e-14)
    )
    assert chi[at_center[0]] == 1.0
    # 0 on the neighborhood boundary
    assert np.all(chi[nb.region.boundary_local] == 0.0)
    assert chi.min() >= 0.0 and chi.max() <= 1.0
    # 0.25 at the center of an adjacent coarse cell
    cell_center = np.flatnonzero(
        (np.abs(coords[:, 0] - (xc - cg.Hx / 2)) < 1e-12)
        & (np.abs(coords[:, 1] - (yc - cg.Hy / 2)) < 1e-12)
    )
    assert abs(chi[cell_center[0]] - 0.25) < 1e-15


def test_partition_of_unity_sums_to_one():
    fine, cg = build_grids(60, 60, 6, 6)
    acc = np.zeros(fine.n_nodes)
    for i in range(cg.n_interior):
        nb = neighborhood(cg, i)
        acc[nb.region.node_ids] += partition_of_unity(cg, i)
    coords = fine.node_coords()
    H = cg.Hx
    inner = (
        (coords[:, 0] >= H - 1e-12)
        & (coords[:, 0] <= 1 - H + 1e-12)
        & (coords[:, 1] >= H - 1e-12)
        & (coords[:, 1] <= 1 - H + 1e-12)
    )
    assert np.abs(acc[inner] - 1.0).max() <= 4 * np.finfo(float).eps


def test_region_local_index_maps():
    fine, _ = build_grids(12, 12, 2, 2)
    outer = Region(fine, 2, 10, 2, 10)
    inner = Region(fine, 4, 8, 4, 8)
    idx = outer.local_nodes_of(inner)
    assert np.array_equal(outer.node_ids[idx], inner.node_ids)
    cidx = outer.local_cells_of(inner)
    assert np.array_equal(outer.cell_ids[cidx], inner.cell_ids)
    with pytest.raises(ConfigurationError):
        inner.local_nodes_of(outer)

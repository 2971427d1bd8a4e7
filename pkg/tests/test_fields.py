import json
import warnings

import numpy as np
import pytest

from cgmsfem.exceptions import IngestionError
from cgmsfem.fields import (
    Inclusion,
    InclusionMediumConfig,
    PermeabilityEnsemble,
    case1_config,
    generate_inclusion_medium,
    generate_logsine_medium,
    load_ensemble,
    logsine_factors,
    save_ensemble,
)
from cgmsfem.grid import FineGrid


def test_degenerate_config_gives_identical_realizations():
    grid = FineGrid(20, 20)
    cfg = InclusionMediumConfig(
        background=1.0,
        inclusions=(Inclusion(0.5, 0.5, 0.2, 0.2),),
        contrast=(100.0, 100.0),
        jitter=0,
        seed=5,
    )
    ens = generate_inclusion_medium(grid, cfg, 4)
    for i in range(1, 4):
        assert np.array_equal(ens.values[0], ens.values[i])


def test_single_inclusion_two_values():
    grid = FineGrid(20, 20)
    cfg = InclusionMediumConfig(
        background=1.0,
        inclusions=(Inclusion(0.5, 0.5, 0.2, 0.2),),
        contrast=(1e4, 1e4),
        jitter=0,
        seed=0,
    )
    ens = generate_inclusion_medium(grid, cfg, 1)
    assert set(np.unique(ens.values[0])) == {1.0, 1e4}


def test_generator_determinism():
    grid = FineGrid(30, 30)
    cfg = case1_config(grid, seed=9)
    a = generate_inclusion_medium(grid, cfg, 10)
    b = generate_inclusion_medium(grid, cfg, 10)
    assert np.array_equal(a.values, b.values)
    # realization i does not depend on how many are generated
    c = generate_inclusion_medium(grid, cfg, 3)
    assert np.array_equal(a.values[:3], c.values)


def test_escaped_inclusion_skipped_with_warning():
    grid = FineGrid(20, 20)
    cfg = InclusionMediumConfig(
        background=1.0,
        inclusions=(Inclusion(0.02, 0.02, 0.04, 0.04),),
        contrast=(10.0, 10.0),
        jitter=10,  # half the domain; will eject the inclusion for some draws
        seed=1,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ens = generate_inclusion_medium(grid, cfg, 20)
    assert any("skipped" in str(w.message) for w in caught)
    assert np.all(ens.values > 0)


def test_invalid_inclusion_config_rejected():
    with pytest.raises(ValueError):
        InclusionMediumConfig(background=2000.0, contrast=(1e3, 1e4))
    with pytest.raises(ValueError):
        Inclusion(0.5, 0.5, -0.1, 0.2)


def test_logsine_factor_bounds():
    x = np.linspace(0, 1, 301)
    X, Y = np.meshgrid(x, x)
    g = logsine_factors(X.ravel(), Y.ravel())
    assert g.min() >= 1.0 / 3.0 - 1e-12
    assert g.max() <= 3.0 + 1e-12


def test_logsine_zero_variables_value():
    # with all xi = 0 the field is exp(0.1) everywhere
    g = logsine_factors(np.array([0.3]), np.array([0.7]))
    assert abs(np.exp(0.1 + g.T @ np.zeros(3)) - 1.1051709180756477) < 1e-15


def test_logsine_log_mean_monte_carlo():
    # empirical mean of log kappa at a fixed cell over many draws
    grid = FineGrid(2, 2)
    M = 100_000
    ens = generate_logsine_medium(grid, M, seed=123)
    logs = np.log(ens.values[:, 1])
    centers = grid.cell_centers()
    g = logsine_factors(centers[:, 0], centers[:, 1])[:, 1]
    stderr = np.linalg.norm(g) / np.sqrt(M)
    assert abs(logs.mean() - 0.1) < 3 * stderr


def test_logsine_bound_per_realization():
    grid = FineGrid(10, 10)
    ens = generate_logsine_medium(grid, 50, seed=3)
    # |log kappa - 0.1| <= 3 * sum |xi_k| since every factor is at most 3
    from cgmsfem._util import STREAM_LOGSINE, substream

    for i in range(ens.M):
        xi = substream(3, STREAM_LOGSINE, i).standard_normal(3)
        bound = 3.0 * np.abs(xi).sum() + 1e-12
        assert np.abs(np.log(ens.values[i]) - 0.1).max() <= bound


def test_ensemble_roundtrip(tmp_path):
    grid = FineGrid(12, 8)
    rng = np.random.default_rng(5)
    values = rng.uniform(0.5, 2.0, (3, grid.n_cells))
    weights = np.array([0.2, 0.3, 0.5])
    ens = PermeabilityEnsemble(grid, values, weights)
    save_ensemble(ens, tmp_path / "ens")
    back = load_ensemble(tmp_path / "ens")
    assert np.array_equal(back.values, ens.values)
    assert np.array_equal(back.weights, ens.weights)
    assert (back.grid.nx, back.grid.ny) == (12, 8)


def test_load_rejects_nonpositive_cell(tmp_path):
    grid = FineGrid(4, 4)
    ens = PermeabilityEnsemble.with_uniform_weights(grid, np.ones((1, grid.n_cells)))
    save_ensemble(ens, tmp_path / "ens")
    bad = np.ones(grid.n_cells)
    bad[5] = 0.0
    (tmp_path / "ens" / "realization_0000.bin").write_bytes(
        bad.astype("<f8").tobytes()
    )
    with pytest.raises(IngestionError):
        load_ensemble(tmp_path / "ens")


def test_load_rejects_bad_weights(tmp_path):
    grid = FineGrid(4, 4)
    ens = PermeabilityEnsemble.with_uniform_weights(grid, np.ones((2, grid.n_cells)))
    save_ensemble(ens, tmp_path / "ens")
    meta = json.loads((tmp_path / "ens" / "ensemble.json").read_text())
    meta["weights"] = [0.7, 0.7]
    (tmp_path / "ens" / "ensemble.json").write_text(json.dumps(meta))
    with pytest.raises(IngestionError):
        load_ensemble(tmp_path / "ens")


def test_load_rejects_size_mismatch(tmp_path):
    grid = FineGrid(4, 4)
    ens = PermeabilityEnsemble.with_uniform_weights(grid, np.ones((1, grid.n_cells)))
    save_ensemble(ens, tmp_path / "ens")
    (tmp_path / "ens" / "realization_0000.bin").write_bytes(b"\0" * 9)
    with pytest.raises(IngestionError):
        load_ensemble(tmp_path / "ens")


def test_load_rejects_missing_metadata(tmp_path):
    with pytest.raises(IngestionError):
        load_ensemble(tmp_path / "nope")


def test_ensemble_invariants():
    grid = FineGrid(4, 4)
    with pytest.raises(ValueError):
        PermeabilityEnsemble(grid, np.zeros((1, grid.n_cells)), np.ones(1))
    with pytest.raises(ValueError):
        PermeabilityEnsemble(
            grid, np.ones((2, grid.n_cells)), np.array([0.6, 0.6])
        )

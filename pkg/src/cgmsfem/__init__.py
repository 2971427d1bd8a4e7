"""Cluster-based generalized multiscale FEM for random elliptic problems."""

__version__ = "0.1.0"

from .exceptions import ConfigurationError, IngestionError, NumericalError
from .fields import (
    PermeabilityEnsemble,
    generate_inclusion_medium,
    generate_logsine_medium,
    load_ensemble,
    save_ensemble,
)
from .grid import (
    CoarseGrid,
    FineGrid,
    Neighborhood,
    OversampledNeighborhood,
    Region,
    build_grids,
    neighborhood,
    oversample,
    partition_of_unity,
)

__all__ = [
    "ConfigurationError",
    "IngestionError",
    "NumericalError",
    "PermeabilityEnsemble",
    "generate_inclusion_medium",
    "generate_logsine_medium",
    "load_ensemble",
    "save_ensemble",
    "CoarseGrid",
    "FineGrid",
    "Neighborhood",
    "OversampledNeighborhood",
    "Region",
    "build_grids",
    "neighborhood",
    "oversample",
    "partition_of_unity",
    "__version__",
]

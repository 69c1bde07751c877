"""Tile-based open-dump waste mapping for UAV orthomosaics.

Pipeline: catalog ingest -> metric grid -> tile extraction -> classification
-> evaluation -> regional contamination scoring -> socio-spatial correlation.
"""

__version__ = "0.1.0"

from wastemap.errors import (
    BackendError,
    ConfigError,
    DataError,
    WastemapError,
)

__all__ = [
    "__version__",
    "WastemapError",
    "ConfigError",
    "DataError",
    "BackendError",
]

"""Exception hierarchy. Exit codes: 2 config, 3 data, 4 backend."""


class WastemapError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(WastemapError):
    """Invalid configuration or parameters; detected before any work runs."""

    exit_code = 2


class DataError(WastemapError):
    """Bad, missing, or inconsistent input data."""

    exit_code = 3


class BackendError(WastemapError):
    """Classifier backend failure while processing a batch."""

    exit_code = 4


class IngestError(DataError):
    """Catalog or download failure that is safe to retry."""


class CatalogParseError(DataError):
    """Malformed catalog response; message names the offending field."""


class NotFoundError(DataError):
    """Requested identifier does not resolve in the catalog."""


class IntegrityError(DataError):
    """Downloaded asset failed checksum verification."""


class GeometryError(DataError):
    """Degenerate or out-of-extent geometry."""


class EmptyTileError(DataError):
    """Tile window contains no valid pixels."""


class JoinError(DataError):
    """Record sets that should align on tile ids do not."""


class ContractError(BackendError):
    """Model file violates the classifier interface contract."""


class ModelParseError(BackendError):
    """Model file is not a readable operator-graph artifact."""

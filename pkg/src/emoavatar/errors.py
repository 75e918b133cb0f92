"""Exception types shared across the package."""


class EmoAvatarError(Exception):
    """Base class for all package errors."""


class DimensionError(EmoAvatarError, ValueError):
    """Operand shapes are incompatible; message names both shapes."""


class DomainError(EmoAvatarError, ValueError):
    """Input value outside the operation's domain (empty tensor, bad range)."""


class ContractError(EmoAvatarError, RuntimeError):
    """API contract violated (non-scalar loss, reused tape, detached tensor)."""


class ConfigError(EmoAvatarError, ValueError):
    """Invalid or mismatched configuration."""


class DatasetError(EmoAvatarError, ValueError):
    """Base for dataset/checkpoint container load failures."""


class VersionError(DatasetError):
    """Container schema version not supported."""


class BlobTableError(DatasetError):
    """Blob table entry missing, inconsistent, or out of bounds."""


class TruncatedBlobError(DatasetError):
    """Blob file shorter than the table's declared extents."""

"""Exception types shared across the package."""


class SamaeError(Exception):
    """Base class for package errors."""


class ShapeMismatch(SamaeError):
    """Operands do not share a compatible shape."""


class DegenerateMesh(SamaeError):
    """Every projected triangle has zero area; nothing to rasterize."""


class MissingSidecar(SamaeError):
    """A dataset record lacks a required sidecar file."""


class EmptyPool(SamaeError):
    """A sampling pool is empty."""


class CorruptCheckpoint(SamaeError):
    """Checkpoint file is truncated or has a bad magic/version."""


class NonFiniteLoss(SamaeError):
    """A training loss became NaN or infinite."""


class EmptyReport(SamaeError):
    """Report requested but no metrics are available."""


class CorruptAsset(SamaeError):
    """Mesh asset file is truncated or has a bad magic/version."""

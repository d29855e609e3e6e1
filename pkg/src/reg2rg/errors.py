"""Exception types shared across the package."""


class Reg2RGError(Exception):
    """Base class for all package errors."""


class ValidationError(Reg2RGError):
    """Bad configuration, manifest, or argument values."""


class VolumeFormatError(Reg2RGError):
    """Malformed volume/mask file: bad header, payload mismatch, non-finite data."""


class EmptyRegionError(Reg2RGError):
    """A region mask contains no foreground voxels."""


class CheckpointMismatchError(Reg2RGError):
    """Checkpoint config hash does not match the current model configuration."""


class TrainingDivergedError(Reg2RGError):
    """Loss became non-finite during training."""


class ContextOverflowError(Reg2RGError):
    """Sequence does not fit within the decoder's maximum length."""

"""Shared exception types."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class CheckpointFormatError(ValueError):
    """A checkpoint file is malformed; the message names the failing field."""


class OutOfBoundsError(ValueError):
    """Pixel coordinates fall outside the image."""


class InsufficientAnnotationsError(ValueError):
    """A training step needs labeled pixels of a class that has none."""


class PairingError(ValueError):
    """Probability maps and ground-truth maps could not be matched by image id."""


class NotReadyError(RuntimeError):
    """No model has been published yet (warm-up not satisfied)."""

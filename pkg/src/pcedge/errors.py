"""Exception types shared across the package."""


class PcedgeError(Exception):
    """Base class for all library errors."""


class InvalidInput(PcedgeError):
    """Malformed or out-of-range input data."""


class DegenerateNeighborhood(PcedgeError):
    """A neighborhood whose covariance carries no directional information."""


class InsufficientNeighborhood(PcedgeError):
    """Too few points to run a neighborhood-based operation."""


class DuplicatePoint(PcedgeError):
    """A neighbor coincides exactly with the patch center."""


class DegenerateInput(PcedgeError):
    """Geometry with zero extent where a finite extent is required."""


class EmptyEdgeSet(PcedgeError):
    """An evaluation side contains no edge points."""


class ModelShapeError(PcedgeError):
    """Parameter tensors do not match the expected architecture."""


class StateError(PcedgeError):
    """Operation invoked without its required prior state."""


class NumericalError(PcedgeError):
    """Non-finite values produced during numerical computation."""


class CorruptCheckpoint(PcedgeError):
    """Checkpoint file is truncated, altered, or has a bad header."""

"""Exception types raised by the toolkit."""


class Cubify3DError(Exception):
    """Base class for all toolkit errors."""


class BehindCamera(Cubify3DError, ValueError):
    """A box corner lies on or behind the image plane (z <= 0)."""


class OutOfRoi(Cubify3DError, ValueError):
    """An object center lies outside the cubified region of interest."""


class ShapeMismatch(Cubify3DError, ValueError):
    """Prediction and ground truth arrays have incompatible shapes."""


class NegativeDimension(Cubify3DError, ValueError):
    """A masked width/height/length entry is negative."""


class BoundaryPoint(Cubify3DError, ValueError):
    """A gradient check was requested at a non-differentiable point."""


class MalformedLine(Cubify3DError, ValueError):
    """A label line could not be parsed.

    Attributes:
        line_number: 1-based line number in the source text.
        reason: short human readable explanation.
    """

    def __init__(self, line_number, reason):
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"line {line_number}: {reason}")


class MissingP2(Cubify3DError, ValueError):
    """A calibration file has no P2 projection row."""


class CorruptTensorFile(Cubify3DError, ValueError):
    """A serialized label tensor could not be read."""

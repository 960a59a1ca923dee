"""Exceptions raised by the simulator and the design engine."""
from typing import Optional


class SqueezeDesignerError(Exception):
    """Base class for all library errors."""

    code = 'error'

    def to_dict(self) -> dict:
        return {'error': self.code, 'message': str(self)}


class CapacityError(SqueezeDesignerError):
    """A space, matrix or enumeration exceeds the configured budget."""

    code = 'capacity'

    def __init__(self, message: str, size: Optional[int] = None):
        super().__init__(message)
        self.size = size

    def to_dict(self) -> dict:
        data = super().to_dict()
        if self.size is not None:
            data['size'] = self.size
        return data


class ModeError(SqueezeDesignerError):
    """Invalid mode indices, path maps or mode subsets."""

    code = 'mode'


class DimensionMismatchError(SqueezeDesignerError):
    """Two objects that must share a ModeSpace do not."""

    code = 'dimension_mismatch'


class NoSupportError(SqueezeDesignerError):
    """A click pattern has (numerically) zero probability."""

    code = 'no_support'


class OrderingError(SqueezeDesignerError):
    """Invalid source ordering or template."""

    code = 'ordering'


class UnknownNameError(SqueezeDesignerError):
    """Unknown target, baseline or preset name."""

    code = 'unknown_name'


class DescriptorError(SqueezeDesignerError):
    """Experiment descriptor failed validation."""

    code = 'descriptor'

    def __init__(self, message: str, field: str = '', line: Optional[int] = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def to_dict(self) -> dict:
        data = super().to_dict()
        data['field'] = self.field
        if self.line is not None:
            data['line'] = self.line
        return data


class OptimizationError(SqueezeDesignerError):
    """An optimization ended without meeting its convergence criteria."""

    code = 'optimization'

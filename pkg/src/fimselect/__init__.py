"""Fisher-information-based measurement selection for vehicle tracking."""

__version__ = "0.1.0"

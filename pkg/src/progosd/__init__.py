"""Speaker-aware progressive overlapping speech detection, desk scale."""

__version__ = "0.1.0"

"""Feature extraction adapter for the reside dataset directory format."""

__version__ = "0.1.0"

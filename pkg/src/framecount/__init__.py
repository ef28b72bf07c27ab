"""Topic-model content scoring and count regression of reshared political posts."""

__version__ = "0.1.0"

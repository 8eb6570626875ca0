"""Urban physical disorder detection and factor ranking from street-view imagery."""

__version__ = "0.1.0"

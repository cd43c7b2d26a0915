"""Representative template matching with fine balance."""
__version__ = "0.1.0"

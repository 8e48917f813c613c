"""Three-stream volumetric scene factorisation (background / objects / actor)."""

__version__ = "0.1.0"

"""udfcloth: sketch-driven garment reconstruction and editing on unsigned distance fields."""

__version__ = "0.1.0"

"""Collection-constrained 3D face fitting and expression-only re-rendering."""

__version__ = "0.1.0"

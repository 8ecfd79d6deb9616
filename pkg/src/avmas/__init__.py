"""Multi-environment specimen monitoring and traditional/polymorphic classification."""

__version__ = "0.1.0"

"""CTP-based hierarchical left-turn planning for unsignalized intersections."""

__version__ = "0.1.0"

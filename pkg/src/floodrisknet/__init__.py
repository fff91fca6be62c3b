"""Flood-risk rating of urban grid cells from a learned spatial flood-dependence graph."""
__version__ = "0.1.0"

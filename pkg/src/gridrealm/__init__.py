"""Tile-world survival simulator with learning agents and analysis tooling."""

__version__ = "0.1.0"

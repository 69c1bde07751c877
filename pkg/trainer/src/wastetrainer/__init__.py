"""Tile classifier training and portable model export.

Consumes the mapping pipeline's interchange files (dataset manifest CSV plus
PNG tile dumps) and produces a portable operator-graph model file the
inference side loads directly.
"""

__version__ = "0.1.0"

CLASS_NAMES = ("background", "waste")

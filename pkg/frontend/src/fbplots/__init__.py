"""Figures from fbtransport output files.

Reads the CLI's CSV/JSON tables (and nothing else: no simulator state, no
recomputation) and renders the standard figures: numeric series as points
with error bars, analytic rows as dashed overlays, run metadata in the
legend. Inputs are never written to.
"""

from .io import SCHEMA, SchemaError, Table, read_table
from .figures import KINDS, FigureSpec, Series, assemble, render

__all__ = [
    "SCHEMA",
    "SchemaError",
    "Table",
    "read_table",
    "KINDS",
    "FigureSpec",
    "Series",
    "assemble",
    "render",
]

__version__ = "0.1.0"

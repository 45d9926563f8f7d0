"""Render publication-style figures from a simulator run directory.

The simulator writes delimited outputs (a monthly time series, the
recorded-flow table as a percentage of its target, and a household
wealth histogram); this package turns those files into three figures
without touching anything else in the run directory.
"""

from .figures import FIGURES, FigureError, FigureSpec, make_figures

__all__ = ["FIGURES", "FigureError", "FigureSpec", "make_figures"]

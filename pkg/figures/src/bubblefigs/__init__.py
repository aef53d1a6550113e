"""Publication-style figures from market-laboratory plot data."""

from .render import FIGURE_KINDS, FigureInputError, PlotSpec, render

__version__ = "0.1.0"

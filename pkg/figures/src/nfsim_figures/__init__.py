"""Figure pipeline for neurofeedback-training simulation outputs."""

from .render import FIGURE_IDS, FigureError, FigureSpec, SchemaError, render

__version__ = "0.1.0"

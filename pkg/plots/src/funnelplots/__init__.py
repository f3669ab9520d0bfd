"""CSV-driven figure rendering for funnel synthesis solution bundles."""

from .render import ALL_FIGURES, FigureSpec, MissingDataError, main, render

__all__ = ["ALL_FIGURES", "FigureSpec", "MissingDataError", "main", "render"]

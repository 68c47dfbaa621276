"""Figure generation for dynenvwalk CSV artifacts."""

from .figures import (FIGURE_KINDS, FigureSpec, RenderError, render,
                      strip_metadata)

__version__ = "0.1.0"

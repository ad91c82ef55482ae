"""Figure rendering for causal-training outputs.

Consumes only the on-disk formats (grid containers and the versioned
CSV families); it never imports the training engine.
"""

from .figures import FigureJob, plot_heatmap, plot_history, plot_spectrum
from .readers import FormatError, Grid, read_grid, read_history, \
    read_per_time_errors, read_snapshots, read_spectrum

__all__ = [
    "FigureJob",
    "FormatError",
    "Grid",
    "plot_heatmap",
    "plot_history",
    "plot_spectrum",
    "read_grid",
    "read_history",
    "read_per_time_errors",
    "read_snapshots",
    "read_spectrum",
]

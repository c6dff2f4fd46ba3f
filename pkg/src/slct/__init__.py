"""Sparse-scan confocal non-line-of-sight reconstruction with a surface prior."""

__version__ = "0.1.0"

from .forward import render_transient, synth_scene  # noqa: E402
from .grid import SceneGrid, ScanMask, SolverParams, make_grid  # noqa: E402
from .solvers import inpaint_reconstruct, l1_baseline, lct_baseline, slct_reconstruct  # noqa: E402

__all__ = [
    "SceneGrid",
    "ScanMask",
    "SolverParams",
    "make_grid",
    "render_transient",
    "synth_scene",
    "slct_reconstruct",
    "inpaint_reconstruct",
    "l1_baseline",
    "lct_baseline",
]

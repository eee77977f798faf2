"""Parametric truss-type basis classes built from capsule unions.

Strut endpoints live on the unit square and wrap periodically.  The default
halfwidths are tuning choices, not ground truth; every preset can be rebuilt
with other widths through ``make_basis``.
"""

from __future__ import annotations

import numpy as np

from .fields import BasisClass, truss_sdf

# Named strut layouts.  Single strips wrap into connected periodic bars; the
# double-bar families are deliberately broken (two disjoint strips each) and
# get rejected by lower-bound preprocessing, which demands self-connectedness.
_LAYOUTS = {
    # two crossing diagonals
    "x": [((0.0, 0.0), (1.0, 1.0)), ((0.0, 1.0), (1.0, 0.0))],
    # one horizontal strip (uniaxial, stiff along x only)
    "bar_h": [((0.0, 0.5), (1.0, 0.5))],
    # one vertical strip
    "bar_v": [((0.5, 0.0), (0.5, 1.0))],
    # diagonals plus the periodic frame (frame wraps to one horizontal and
    # one vertical strut at the cell edge)
    "x_frame": [((0.0, 0.0), (1.0, 1.0)), ((0.0, 1.0), (1.0, 0.0)),
                ((0.0, 0.0), (1.0, 0.0)), ((0.0, 0.0), (0.0, 1.0))],
    # rotated square through the edge midpoints
    "diamond": [((0.5, 0.0), (1.0, 0.5)), ((1.0, 0.5), (0.5, 1.0)),
                ((0.5, 1.0), (0.0, 0.5)), ((0.0, 0.5), (0.5, 0.0))],
    # two horizontal strips
    "bars_h": [((0.0, 0.25), (1.0, 0.25)), ((0.0, 0.75), (1.0, 0.75))],
    # two vertical strips
    "bars_v": [((0.25, 0.0), (0.25, 1.0)), ((0.75, 0.0), (0.75, 1.0))],
}


def make_basis(name: str, grid, halfwidth: float = 0.05) -> BasisClass:
    """Build one named truss basis on an ``(nx, ny)`` grid."""
    if name not in _LAYOUTS:
        raise ValueError(f"unknown truss layout {name!r}; "
                         f"choose from {sorted(_LAYOUTS)}")
    segments = [(p1, p2, halfwidth) for p1, p2 in _LAYOUTS[name]]
    return BasisClass(name, truss_sdf(segments, grid))


def truss_bases(names, grid, halfwidth: float = 0.05):
    """Basis classes for a list of layout names."""
    return [make_basis(n, grid, halfwidth) for n in names]


def default_truss_names(d: int):
    """The first ``d`` layouts of the five-class truss family."""
    order = ["x", "bar_h", "bar_v", "x_frame", "diamond"]
    if not 1 <= d <= len(order):
        raise ValueError(f"d must be in 1..{len(order)}")
    return order[:d]


def segments_from_config(spec):
    """Parse ``[[x1, y1, x2, y2, halfwidth], ...]`` into truss_sdf segments."""
    segs = []
    for row in spec:
        x1, y1, x2, y2, hw = (float(v) for v in row)
        segs.append(((x1, y1), (x2, y2), hw))
    return segs

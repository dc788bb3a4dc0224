"""Contour rendering of cellwise fields as standalone SVG documents.

The drawing maps the unit square to the SVG viewBox ``0 0 1 1`` with the
vertical axis flipped (SVG grows downward), fills every cell polygon from
a three-stop linear colour map, and stamps a small legend with the field
minimum and maximum into the top-left corner.  An optional overlay
polyline (for example a material interface) is stroked on top.
"""

from __future__ import annotations

import numpy as np

from .mesh import PolytopalMesh

__all__ = ["RenderError", "emit_contour_svg"]


class RenderError(Exception):
    """Raised for non-renderable fields (wrong length, non-finite values)."""


# colour stops of a diverging low -> mid -> high map
_STOPS = np.array(
    [
        [0x31, 0x36, 0x95],  # deep blue
        [0xFF, 0xFF, 0xBF],  # pale yellow
        [0xA5, 0x00, 0x26],  # deep red
    ],
    dtype=np.float64,
)


def _colour(t: float) -> str:
    """Hex colour at parameter ``t`` in [0, 1] of the linear map."""
    t = min(1.0, max(0.0, float(t)))
    if t <= 0.5:
        lo, hi, s = _STOPS[0], _STOPS[1], 2.0 * t
    else:
        lo, hi, s = _STOPS[1], _STOPS[2], 2.0 * t - 1.0
    rgb = np.rint(lo + s * (hi - lo)).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _fmt(x: float) -> str:
    """Compact fixed-precision coordinate/value formatting."""
    return f"{x:.6g}"


def emit_contour_svg(mesh: PolytopalMesh, values, path, *, overlay=None,
                     stroke: str = "#00000030") -> None:
    """Write a per-cell filled contour plot of ``values`` to ``path``.

    ``values`` must provide one finite value per cell.  ``path`` may be a
    filesystem path or a writable text stream.  ``overlay`` is an optional
    sequence of (x, y) points stroked as a polyline on top of the cells.
    A constant field renders in the single mid-map colour and the legend
    shows ``min = max``.  I/O errors propagate to the caller.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (mesh.n_cells,):
        raise RenderError(
            f"field has shape {values.shape}, expected one value per cell "
            f"({mesh.n_cells},)"
        )
    bad = np.nonzero(~np.isfinite(values))[0]
    if bad.size:
        raise RenderError(f"cell {int(bad[0])} has a non-finite value ({values[bad[0]]!r})")

    vmin = float(values.min())
    vmax = float(values.max())
    span = vmax - vmin

    lines = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1 1" '
        'width="640" height="640">',
        f"<!-- cellwise field, min={_fmt(vmin)} max={_fmt(vmax)} -->",
    ]
    for c in range(mesh.n_cells):
        pts = mesh.vertices[mesh.cell_loop(c)]
        coords = " ".join(f"{_fmt(x)},{_fmt(1.0 - y)}" for x, y in pts)
        t = 0.5 if span == 0.0 else (values[c] - vmin) / span
        lines.append(
            f'<polygon points="{coords}" fill="{_colour(t)}" '
            f'stroke="{stroke}" stroke-width="0.0015"/>'
        )
    if overlay is not None:
        pts = np.asarray(overlay, dtype=np.float64).reshape(-1, 2)
        coords = " ".join(f"{_fmt(x)},{_fmt(1.0 - y)}" for x, y in pts)
        lines.append(
            f'<polyline points="{coords}" fill="none" stroke="#000000" '
            'stroke-width="0.004" stroke-dasharray="0.02 0.01"/>'
        )
    # legend: colour bar plus min/max labels, backed for readability
    lines.append('<g font-family="monospace" font-size="0.033">')
    lines.append(
        '<rect x="0.015" y="0.015" width="0.42" height="0.1" fill="#ffffff" '
        'opacity="0.85" stroke="#000000" stroke-width="0.002"/>'
    )
    nbar = 24
    for k in range(nbar):
        lines.append(
            f'<rect x="{_fmt(0.03 + 0.39 * k / nbar)}" y="0.03" '
            f'width="{_fmt(0.39 / nbar + 1e-3)}" height="0.03" '
            f'fill="{_colour(0.5 if span == 0.0 else (k + 0.5) / nbar)}"/>'
        )
    lines.append(
        f'<text x="0.03" y="0.098">min {_fmt(vmin)}  max {_fmt(vmax)}</text>'
    )
    lines.append("</g>")
    lines.append("</svg>")
    text = "\n".join(lines) + "\n"

    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)

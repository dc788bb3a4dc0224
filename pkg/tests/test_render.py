"""Tests for the per-cell SVG contour renderer."""

import io
import re

import numpy as np
import pytest

from vgs.cases import build_family_mesh
from vgs.render import RenderError, emit_contour_svg


def _render_text(mesh, values, **kw):
    buf = io.StringIO()
    emit_contour_svg(mesh, values, buf, **kw)
    return buf.getvalue()


def _polygon_fills(text):
    return re.findall(r'<polygon[^>]*fill="(#[0-9a-f]{6})"', text)


def test_svg_has_one_polygon_per_cell_and_unit_viewbox(tmp_path):
    mesh = build_family_mesh("hex", 5)
    values = mesh.cell_centre[:, 0] + 2.0 * mesh.cell_centre[:, 1]
    out = tmp_path / "field.svg"
    emit_contour_svg(mesh, values, out)
    text = out.read_text()
    assert text.startswith("<svg")
    assert 'viewBox="0 0 1 1"' in text
    assert len(_polygon_fills(text)) == mesh.n_cells
    assert text.rstrip().endswith("</svg>")


def test_svg_flips_vertical_axis():
    # one row of cells near y = 1 must be drawn near svg-y = 0
    mesh = build_family_mesh("tri", 3)
    values = np.zeros(mesh.n_cells)
    text = _render_text(mesh, values)
    ys = [
        float(pair.split(",")[1])
        for pts in re.findall(r'<polygon points="([^"]*)"', text)
        for pair in pts.split()
    ]
    # mesh vertices span [0, 1] in y; flipped coordinates must too, and the
    # cell touching y = 1 must produce svg-y = 0
    assert min(ys) == pytest.approx(0.0, abs=1e-12)
    assert max(ys) == pytest.approx(1.0, abs=1e-12)


def test_constant_field_single_colour_legend_min_equals_max():
    mesh = build_family_mesh("tri", 2)
    text = _render_text(mesh, np.full(mesh.n_cells, 3.25))
    fills = set(_polygon_fills(text))
    assert len(fills) == 1  # every cell in the single mid-map colour
    assert "min 3.25" in text and "max 3.25" in text


def test_varying_field_uses_extreme_colours():
    mesh = build_family_mesh("tri", 4)
    values = mesh.cell_centre[:, 0]
    text = _render_text(mesh, values)
    fills = _polygon_fills(text)
    assert "#313695" in fills  # low end of the map
    assert "#a50026" in fills  # high end of the map
    assert len(set(fills)) > 2


def test_non_finite_value_error_names_cell():
    mesh = build_family_mesh("tri", 3)
    values = np.ones(mesh.n_cells)
    values[7] = np.nan
    with pytest.raises(RenderError, match="cell 7"):
        _render_text(mesh, values)
    values[7] = np.inf
    with pytest.raises(RenderError, match="cell 7"):
        _render_text(mesh, values)


def test_wrong_field_length_rejected():
    mesh = build_family_mesh("tri", 3)
    with pytest.raises(RenderError, match="one value per cell"):
        _render_text(mesh, np.ones(mesh.n_cells + 1))


def test_overlay_polyline_rendered():
    mesh = build_family_mesh("hex", 4)
    values = mesh.cell_centre[:, 1]
    text = _render_text(mesh, values, overlay=[(0.0, 0.5), (1.0, 0.5)])
    m = re.search(r'<polyline points="([^"]*)"', text)
    assert m is not None
    pts = m.group(1).split()
    assert pts == ["0,0.5", "1,0.5"]  # y = 0.5 is its own mirror image


def test_io_failure_is_surfaced(tmp_path):
    mesh = build_family_mesh("tri", 2)
    with pytest.raises(OSError):
        emit_contour_svg(mesh, np.zeros(mesh.n_cells), tmp_path)  # a directory

import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from photon_portrait.core import PortraitGrid
from photon_portrait.svg import export_svg_heatmap, export_svg_lines, read_svg_heatmap


def _grid(values):
    values = np.atleast_2d(np.asarray(values, dtype=complex))
    n, m = values.shape
    return PortraitGrid(np.linspace(-0.01, 0.01, n) if n > 1 else np.zeros(1), np.arange(m, dtype=float), values)


def test_single_cell_is_full_intensity():
    root = ET.fromstring(export_svg_heatmap(_grid([[0.37j]])))
    cells = [el for el in root.iter() if el.get("data-q") is not None]
    assert len(cells) == 1
    assert cells[0].get("data-q") == "255"


def test_maximum_maps_to_top_of_scale():
    text = export_svg_heatmap(_grid([[0.1, 2.0, 1.0], [0.0, 0.5, 1.5]]))
    q = [int(el.get("data-q")) for el in ET.fromstring(text).iter() if el.get("data-q") is not None]
    assert max(q) == 255 and min(q) == 0


@given(arrays(np.float64, (3, 4), elements=st.floats(0, 1e3)))
def test_round_trip_to_eight_bits(mag):
    back = read_svg_heatmap(export_svg_heatmap(_grid(mag)))
    assert back.shape == mag.shape
    assert np.all(np.abs(back - mag) <= mag.max() / 255 / 2 * (1 + 1e-9) + 1e-300)


def test_all_zero_grid_is_dark():
    back = read_svg_heatmap(export_svg_heatmap(_grid(np.zeros((2, 2)))))
    assert np.all(back == 0)


def test_empty_grid_is_rejected():
    with pytest.raises(ValueError):
        export_svg_heatmap(PortraitGrid(np.zeros(1), np.zeros(0), np.zeros((1, 0), dtype=complex)))


def test_heatmap_file_and_title(tmp_path):
    path = tmp_path / "map.svg"
    text = export_svg_heatmap(_grid([[1, 2], [3, 4]]), path, title="demo")
    assert path.read_text() == text
    assert "<title>demo</title>" in text


def test_lines():
    t = np.linspace(0, 10, 11)
    text = export_svg_lines([("a", t, np.exp(-t)), ("b", t, np.ones_like(t))])
    root = ET.fromstring(text)
    lines = [el for el in root.iter() if el.tag.endswith("polyline")]
    assert [el.get("data-label") for el in lines] == ["a", "b"]
    assert len(lines[0].get("points").split()) == 11
    with pytest.raises(ValueError):
        export_svg_lines([])

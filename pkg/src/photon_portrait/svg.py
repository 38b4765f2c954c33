"""Dependency-free SVG output: portrait heatmaps and trace line plots.

Heatmap cells carry their 8-bit intensity in a ``data-q`` attribute so a
document can be read back with :func:`read_svg_heatmap`.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import PortraitGrid, ordinary_frequency

# dark blue -> teal -> yellow, interpolated linearly
_STOPS = np.array([[0.0, 13, 8, 135], [0.35, 33, 145, 140], [0.7, 94, 201, 98], [1.0, 253, 231, 37]])

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 20, 50


def _color(q: int) -> str:
    x = q / 255
    rgb = [np.interp(x, _STOPS[:, 0], _STOPS[:, k]) for k in (1, 2, 3)]
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step + 1e-9) + 1)]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def export_svg_heatmap(grid: PortraitGrid, path=None, title: str = "") -> str:
    """Magnitude heatmap, linear scale normalized to the grid maximum.

    Rows are detunings (shown in MHz, bottom to top), columns are times (ns).
    """
    mag = grid.magnitude()
    if mag.size == 0:
        raise ValueError("empty grid")
    peak = float(mag.max())
    q = np.zeros(mag.shape, dtype=int) if peak == 0 else np.rint(255 * mag / peak).astype(int)
    n_det, n_t = mag.shape
    pw, ph = _W - _ML - _MR, _H - _MT - _MB
    cw, ch = pw / n_t, ph / n_det
    det_mhz = ordinary_frequency(grid.detunings, "MHz")
    t = grid.times

    root = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(_W),
        height=str(_H),
        viewBox=f"0 0 {_W} {_H}",
        **{"data-rows": str(n_det), "data-cols": str(n_t), "data-max": repr(peak)},
    )
    if title:
        ET.SubElement(root, "title").text = title
    cells = ET.SubElement(root, "g", id="cells")
    for i in range(n_det):
        y = _MT + (n_det - 1 - i) * ch
        for j in range(n_t):
            ET.SubElement(
                cells,
                "rect",
                x=_fmt(_ML + j * cw),
                y=_fmt(y),
                width=_fmt(cw * 1.02),
                height=_fmt(ch * 1.02),
                fill=_color(int(q[i, j])),
                **{"data-i": str(i), "data-j": str(j), "data-q": str(int(q[i, j]))},
            )
    _axes(root, (t[0], t[-1]), (det_mhz[0], det_mhz[-1]), "time (ns)", "detuning (MHz)")
    text = ET.tostring(root, encoding="unicode") + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def read_svg_heatmap(text: str) -> np.ndarray:
    """Cell magnitudes recovered from :func:`export_svg_heatmap` output (8-bit resolution)."""
    root = ET.fromstring(text)
    rows, cols = int(root.get("data-rows")), int(root.get("data-cols"))
    peak = float(root.get("data-max"))
    out = np.zeros((rows, cols))
    for el in root.iter():
        if el.get("data-q") is not None:
            out[int(el.get("data-i")), int(el.get("data-j"))] = int(el.get("data-q")) / 255 * peak
    return out


def _axes(root, xr, yr, xlabel, ylabel):
    pw, ph = _W - _ML - _MR, _H - _MT - _MB
    g = ET.SubElement(root, "g", id="axes", stroke="black", fill="none")
    ET.SubElement(g, "rect", x=str(_ML), y=str(_MT), width=str(pw), height=str(ph))
    lab = ET.SubElement(root, "g", id="labels", **{"font-family": "sans-serif", "font-size": "12"})

    def sx(v):
        return _ML + (v - xr[0]) / (xr[1] - xr[0]) * pw if xr[1] != xr[0] else _ML + pw / 2

    def sy(v):
        return _MT + ph - (v - yr[0]) / (yr[1] - yr[0]) * ph if yr[1] != yr[0] else _MT + ph / 2

    for v in _ticks(*xr):
        x = sx(v)
        ET.SubElement(g, "line", x1=_fmt(x), x2=_fmt(x), y1=str(_MT + ph), y2=str(_MT + ph + 5))
        ET.SubElement(lab, "text", x=_fmt(x), y=str(_MT + ph + 18), **{"text-anchor": "middle"}).text = f"{v:g}"
    for v in _ticks(*yr):
        y = sy(v)
        ET.SubElement(g, "line", x1=str(_ML - 5), x2=str(_ML), y1=_fmt(y), y2=_fmt(y))
        ET.SubElement(lab, "text", x=str(_ML - 8), y=_fmt(y + 4), **{"text-anchor": "end"}).text = f"{v:g}"
    ET.SubElement(lab, "text", x=_fmt(_ML + pw / 2), y=str(_H - 10), **{"text-anchor": "middle"}).text = xlabel
    ET.SubElement(
        lab, "text", x="15", y=_fmt(_MT + ph / 2), transform=f"rotate(-90 15 {_fmt(_MT + ph / 2)})", **{"text-anchor": "middle"}
    ).text = ylabel
    return sx, sy


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def export_svg_lines(
    series: Sequence[tuple[str, np.ndarray, np.ndarray]],
    path=None,
    xlabel: str = "time (ns)",
    ylabel: str = "|amplitude|",
) -> str:
    """Line plot of ``(label, x, y)`` series on shared axes."""
    if not series:
        raise ValueError("no series to plot")
    xs = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    xr = (float(xs.min()), float(xs.max()))
    yr = (min(0.0, float(ys.min())), float(ys.max()) if ys.max() > 0 else 1.0)
    root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(_W), height=str(_H), viewBox=f"0 0 {_W} {_H}")
    sx, sy = _axes(root, xr, yr, xlabel, ylabel)
    for k, (label, x, y) in enumerate(series):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(np.asarray(x, float), np.asarray(y, float)))
        color = _PALETTE[k % len(_PALETTE)]
        ET.SubElement(root, "polyline", points=pts, fill="none", stroke=color, **{"stroke-width": "1.5", "data-label": label})
        ET.SubElement(root, "text", x=str(_W - _MR - 5), y=str(_MT + 15 + 15 * k), fill=color, **{"text-anchor": "end", "font-family": "sans-serif", "font-size": "12"}).text = label
    text = ET.tostring(root, encoding="unicode") + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text

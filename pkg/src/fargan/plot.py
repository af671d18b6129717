"""SVG scatter and loss plots.  Styling lives in CSS classes, not attributes."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from typing import Optional, Sequence

import numpy as np

SVG_NS = "http://www.w3.org/2000/svg"

SCATTER_CSS = (
    "circle.real { fill: #1f4fd1; fill-opacity: 0.8; }\n"
    "circle.fake { fill: #d62020; fill-opacity: 0.35; }\n"
)
LINE_CSS = (
    "polyline { fill: none; stroke-width: 1; }\n"
    "polyline.d_loss { stroke: #1f4fd1; }\n"
    "polyline.g_loss { stroke: #d62020; }\n"
    "line.equilibrium { stroke: #888888; stroke-dasharray: 4 3; }\n"
)


def _bounds(points: np.ndarray, margin: float) -> tuple[float, float, float, float]:
    if len(points) == 0:
        return -1.0, -1.0, 2.0, 2.0
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    pad = margin * span
    x0, y0 = lo - pad
    w, h = span + 2 * pad
    return float(x0), float(y0), float(w), float(h)


def _num(v: float) -> str:
    return f"{v:.6g}"


def scatter_svg(
    reals: np.ndarray,
    fakes: np.ndarray,
    title: Optional[str] = None,
    margin: float = 0.1,
    size: int = 600,
) -> str:
    """Reals and fakes as circles of class "real" / "fake".

    The viewBox covers all points plus ``margin`` of the data span on every
    side.  The y axis is flipped so that larger y is drawn higher.
    """
    reals = np.asarray(reals, dtype=np.float64).reshape(-1, 2)
    fakes = np.asarray(fakes, dtype=np.float64).reshape(-1, 2)
    both = np.concatenate([reals, fakes])
    if not np.all(np.isfinite(both)):
        raise ValueError("scatter_svg: points must be finite")
    x0, y0, w, h = _bounds(both, margin)
    r = 0.004 * max(w, h)
    root = ET.Element(
        "svg",
        xmlns=SVG_NS,
        width=str(size),
        height=str(size),
        viewBox=f"{_num(x0)} {_num(-(y0 + h))} {_num(w)} {_num(h)}",
    )
    ET.SubElement(root, "style").text = SCATTER_CSS
    if title:
        ET.SubElement(root, "title").text = title
    for cls, pts in (("real", reals), ("fake", fakes)):
        g = ET.SubElement(root, "g", {"class": cls + "s"})
        for x, y in pts:
            ET.SubElement(g, "circle", {"class": cls, "cx": _num(x), "cy": _num(-y), "r": _num(r)})
    return ET.tostring(root, encoding="unicode")


def loss_svg(
    iters: Sequence[float],
    d_loss: Sequence[float],
    g_loss: Sequence[float],
    reference: Sequence[float] = (2 * math.log(2), math.log(2)),
    width: int = 800,
    height: int = 300,
) -> str:
    """Loss traces as polylines with dashed lines at the equilibrium values."""
    it = np.asarray(iters, dtype=np.float64)
    d = np.asarray(d_loss, dtype=np.float64)
    g = np.asarray(g_loss, dtype=np.float64)
    root = ET.Element("svg", xmlns=SVG_NS, width=str(width), height=str(height),
                      viewBox=f"0 0 {width} {height}")
    ET.SubElement(root, "style").text = LINE_CSS
    finite = np.concatenate([d[np.isfinite(d)], g[np.isfinite(g)], np.asarray(reference, float)])
    if len(it) == 0:
        return ET.tostring(root, encoding="unicode")
    lo, hi = float(finite.min()), float(finite.max())
    span = max(hi - lo, 1e-9)
    lo, hi = lo - 0.1 * span, hi + 0.1 * span
    t0, t1 = float(it.min()), float(max(it.max(), it.min() + 1))

    def px(t, v):
        return (t - t0) / (t1 - t0) * width, height - (v - lo) / (hi - lo) * height

    for ref in reference:
        _, yy = px(t0, ref)
        ET.SubElement(root, "line", {"class": "equilibrium", "x1": "0", "x2": str(width),
                                     "y1": _num(yy), "y2": _num(yy)})
    for cls, vals in (("d_loss", d), ("g_loss", g)):
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in (px(t, v) for t, v in zip(it, vals)) if math.isfinite(b))
        ET.SubElement(root, "polyline", {"class": cls, "points": pts})
    return ET.tostring(root, encoding="unicode")

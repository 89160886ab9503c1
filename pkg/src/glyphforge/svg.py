"""SVG emission and reading for vector sketches.

One path element per stroke (single cubic "C" command), black ink on a
white background rect. Coordinates are written with shortest round-trip
float formatting, so read(emit(sketch)) reproduces coordinates exactly.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

from .errors import DomainError
from .geometry import CubicBezierStroke, VectorSketch

_FLOAT = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PATH_RE = re.compile(
    rf"^\s*M\s*({_FLOAT})[\s,]+({_FLOAT})\s*C\s*({_FLOAT})[\s,]+({_FLOAT})[\s,]+"
    rf"({_FLOAT})[\s,]+({_FLOAT})[\s,]+({_FLOAT})[\s,]+({_FLOAT})\s*$"
)
_SVG_NS = "http://www.w3.org/2000/svg"


def _fmt(v: float) -> str:
    return repr(float(v))


def sketch_to_svg(sketch: VectorSketch) -> str:
    h, w = sketch.canvas
    lines = [
        f'<svg xmlns="{_SVG_NS}" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'  <rect width="{w}" height="{h}" fill="#ffffff"/>',
    ]
    for stroke in sketch.strokes:
        p = stroke.control_points
        d = (
            f"M {_fmt(p[0, 0])} {_fmt(p[0, 1])} "
            f"C {_fmt(p[1, 0])} {_fmt(p[1, 1])} "
            f"{_fmt(p[2, 0])} {_fmt(p[2, 1])} "
            f"{_fmt(p[3, 0])} {_fmt(p[3, 1])}"
        )
        lines.append(
            f'  <path d="{d}" fill="none" stroke="#000000" '
            f'stroke-width="{_fmt(sketch.stroke_width)}" stroke-linecap="round"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def save_svg(sketch: VectorSketch, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(sketch_to_svg(sketch))


def sketch_from_svg(text: str) -> VectorSketch:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise DomainError(f"not parseable as SVG: {e}") from e
    try:
        height = int(round(float(root.get("height"))))
        width = int(round(float(root.get("width"))))
    except (TypeError, ValueError) as e:
        raise DomainError("SVG root must carry numeric width/height") from e

    strokes = []
    stroke_width = None
    for el in root.iter():
        if el.tag.split("}")[-1] != "path":
            continue
        m = _PATH_RE.match(el.get("d", ""))
        if m is None:
            raise DomainError(f"unsupported path data: {el.get('d')!r}")
        vals = [float(g) for g in m.groups()]
        strokes.append(CubicBezierStroke([vals[0:2], vals[2:4], vals[4:6], vals[6:8]]))
        sw = el.get("stroke-width")
        if sw is not None:
            stroke_width = float(sw)
    if not strokes:
        raise DomainError("SVG contains no stroke paths")
    return VectorSketch(strokes=tuple(strokes), stroke_width=stroke_width or 1.0, canvas=(height, width))


def load_svg(path) -> VectorSketch:
    with open(path, "r", encoding="utf-8") as f:
        return sketch_from_svg(f.read())

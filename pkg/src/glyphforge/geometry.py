"""Cubic Bezier math and the vector-sketch data model.

Coordinates are continuous pixel units, origin at the top-left pixel
center, x along columns and y along rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError

K_POINTS = 4  # cubic: P0..P3


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise DomainError(f"point coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


class CubicBezierStroke:
    """One cubic Bezier stroke: exactly four finite control points."""

    __slots__ = ("control_points",)

    def __init__(self, control_points):
        pts = np.asarray(control_points, dtype=np.float64)
        if pts.shape != (K_POINTS, 2):
            raise DomainError(f"a cubic stroke needs exactly {K_POINTS} control points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DomainError("control points must be finite")
        self.control_points = pts
        self.control_points.setflags(write=False)

    @classmethod
    def from_points(cls, p0: Point2, p1: Point2, p2: Point2, p3: Point2) -> "CubicBezierStroke":
        return cls([p.as_array() for p in (p0, p1, p2, p3)])

    def points(self) -> list[Point2]:
        return [Point2(float(x), float(y)) for x, y in self.control_points]

    def __eq__(self, other):
        return isinstance(other, CubicBezierStroke) and np.array_equal(
            self.control_points, other.control_points
        )

    def __repr__(self):
        return f"CubicBezierStroke({self.control_points.tolist()})"


@dataclass(frozen=True)
class VectorSketch:
    """N strokes of fixed width on a white canvas, black ink."""

    strokes: tuple[CubicBezierStroke, ...]
    stroke_width: float
    canvas: tuple[int, int]  # (height, width)

    def __post_init__(self):
        object.__setattr__(self, "strokes", tuple(self.strokes))
        if len(self.strokes) < 1:
            raise DomainError("a sketch needs at least one stroke")
        if not self.stroke_width > 0:
            raise DomainError(f"stroke width must be positive, got {self.stroke_width}")
        h, w = self.canvas
        if h <= 0 or w <= 0:
            raise DomainError(f"canvas dims must be positive, got {self.canvas}")

    @property
    def n_strokes(self) -> int:
        return len(self.strokes)

    def control_array(self) -> np.ndarray:
        """All control points as an (N, 4, 2) array (a copy)."""
        return np.stack([s.control_points for s in self.strokes])

    def with_control_array(self, arr: np.ndarray) -> "VectorSketch":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (self.n_strokes, K_POINTS, 2):
            raise DomainError(f"expected control array of shape {(self.n_strokes, K_POINTS, 2)}, got {arr.shape}")
        return VectorSketch(
            strokes=tuple(CubicBezierStroke(a) for a in arr),
            stroke_width=self.stroke_width,
            canvas=self.canvas,
        )


@dataclass(frozen=True)
class SketchSpec:
    """Stroke-count / canvas recipe used when initializing a sketch."""

    n_strokes: int
    k_points: int = K_POINTS
    canvas: tuple[int, int] = (224, 224)
    stroke_width: float = 3.0

    def __post_init__(self):
        if not 1 <= self.n_strokes <= 1024:
            raise DomainError(f"n_strokes must be in 1..1024, got {self.n_strokes}")
        if self.k_points != K_POINTS:
            raise DomainError(f"only k = {K_POINTS} control points are supported")
        if not self.stroke_width > 0:
            raise DomainError("stroke_width must be positive")


def _bernstein_weights(t: np.ndarray) -> np.ndarray:
    """Cubic Bernstein basis at parameters t: shape (len(t), 4).

    The last weight is the complement of the first three so the basis is
    an exact partition of unity (degenerate strokes evaluate exactly).
    """
    t = np.asarray(t, dtype=np.float64)
    s = 1.0 - t
    w0 = s**3
    w1 = 3.0 * s**2 * t
    w2 = 3.0 * s * t**2
    return np.stack([w0, w1, w2, 1.0 - w0 - w1 - w2], axis=-1)


@lru_cache(maxsize=32)
def _flatten_basis(samples: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, samples)
    b = _bernstein_weights(t)
    b.setflags(write=False)
    return b


def eval_bezier(stroke: CubicBezierStroke, t: float) -> Point2:
    """Evaluate the stroke at parameter t in [0, 1] (Bernstein form)."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must be in [0, 1], got {t}")
    w = _bernstein_weights(np.float64(t))
    xy = w @ stroke.control_points
    return Point2(float(xy[0]), float(xy[1]))


def flatten(stroke: CubicBezierStroke, samples: int) -> list[Point2]:
    """Sample the stroke at T uniformly spaced parameters (endpoints exact)."""
    pts = flatten_array(stroke, samples)
    return [Point2(float(x), float(y)) for x, y in pts]


def flatten_array(stroke: CubicBezierStroke, samples: int) -> np.ndarray:
    """Polyline as a (T, 2) array; t_i = i/(T-1)."""
    if samples < 2:
        raise DomainError(f"need at least 2 samples, got {samples}")
    return _flatten_basis(samples) @ stroke.control_points

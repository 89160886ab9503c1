"""Stroke initialization from an activation map: temperature softmax,
greedy start sampling with Gaussian suppression, and tangent walks that
follow iso-contours of the map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import CubicBezierStroke, Point2, SketchSpec, VectorSketch


@dataclass
class ActivationMap:
    """H x W nonnegative scalar field."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DomainError(f"activation map must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("activation map must be finite")
        if arr.min() < 0.0:
            raise DomainError("activation map must be nonnegative")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 0.3
    suppression_sigma: float = 5.0
    border_margin: int | None = None  # None -> 2% of min canvas dim
    window_frac: float = 0.10
    walk_step: float = 1.0
    walk_on: str = "normalized"  # "normalized" (pre-softmax) or "probability"

    def __post_init__(self):
        if not self.temperature > 0:
            raise DomainError("temperature must be positive")
        if not self.suppression_sigma > 0:
            raise DomainError("suppression sigma must be positive")
        if not 0 < self.window_frac <= 0.5:
            raise DomainError("window_frac must be in (0, 0.5]")
        if not self.walk_step > 0:
            raise DomainError("walk_step must be positive")
        if self.walk_on not in ("normalized", "probability"):
            raise DomainError(f"unknown walk_on mode: {self.walk_on}")

    def resolved_border(self, height: int, width: int) -> int:
        if self.border_margin is not None:
            m = int(self.border_margin)
        else:
            m = int(round(0.02 * min(height, width)))
        if not 0 <= m < min(height, width) / 2:
            raise DomainError(f"border margin {m} too wide for {height}x{width}")
        return m


def minmax_normalize(data: np.ndarray) -> np.ndarray:
    lo = data.min()
    hi = data.max()
    if hi > lo:
        return (data - lo) / (hi - lo)
    return np.zeros_like(data)


def normalize_map(amap: ActivationMap, temperature: float) -> np.ndarray:
    """Min-max normalize, then pixel-wise softmax at the given temperature.

    Returns a probability map of the same shape summing to 1. A constant
    input yields the uniform distribution.
    """
    if not temperature > 0:
        raise DomainError("temperature must be positive")
    scaled = minmax_normalize(amap.data) / temperature
    scaled -= scaled.max()  # stability shift
    e = np.exp(scaled)
    return e / e.sum()


@dataclass(frozen=True)
class SampledStarts:
    points: tuple[Point2, ...]
    random_fill: tuple[bool, ...]  # True where greedy ran out of mass


def sample_starts(prob: np.ndarray, n: int, cfg: SamplerConfig, seed: int = 0) -> SampledStarts:
    """Greedy maxima with Gaussian suppression (sigma = cfg.suppression_sigma).

    The border frame is zeroed first. Each pick subtracts a Gaussian scaled
    to the picked pixel's current value (the pick drops to exactly zero),
    clamping at zero. Ties break in row-major order. If the working map
    runs out of positive mass, remaining picks are uniform random over
    non-border pixels (seeded) and flagged.
    """
    if n < 1:
        raise DomainError("need at least one start")
    work = np.array(prob, dtype=np.float64, copy=True)
    if work.ndim != 2:
        raise DomainError("probability map must be 2-D")
    h, w = work.shape
    margin = cfg.resolved_border(h, w)
    if margin > 0:
        work[:margin, :] = 0.0
        work[-margin:, :] = 0.0
        work[:, :margin] = 0.0
        work[:, -margin:] = 0.0

    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    two_sigma_sq = 2.0 * cfg.suppression_sigma**2

    points: list[Point2] = []
    flags: list[bool] = []
    rng = np.random.default_rng(seed)
    for _ in range(n):
        idx = int(np.argmax(work))  # row-major first maximum
        r, c = divmod(idx, w)
        if work[r, c] > 0.0:
            peak = work[r, c]
            g = peak * np.exp(-((rows - r) ** 2 + (cols - c) ** 2) / two_sigma_sq)
            work = np.maximum(work - g, 0.0)
            points.append(Point2(float(c), float(r)))
            flags.append(False)
        else:
            # uniform over non-border pixels not already picked; duplicates
            # only when the interior is smaller than the request
            taken = {(p.y, p.x) for p in points}
            interior = (h - 2 * margin) * (w - 2 * margin)
            rr = cc = margin
            for _ in range(max(100, 4 * interior)):
                rr = int(rng.integers(margin, h - margin))
                cc = int(rng.integers(margin, w - margin))
                if (float(rr), float(cc)) not in taken:
                    break
            points.append(Point2(float(cc), float(rr)))
            flags.append(True)
    return SampledStarts(points=tuple(points), random_fill=tuple(flags))


def _gradient_fields(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with reflective boundaries: (d/dx, d/dy)."""
    padded = np.pad(data, 1, mode="reflect")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return gx, gy


def _bilinear(field: np.ndarray, x: float, y: float) -> float:
    h, w = field.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    c0 = int(np.floor(x))
    r0 = int(np.floor(y))
    c1 = min(c0 + 1, w - 1)
    r1 = min(r0 + 1, h - 1)
    fx = x - c0
    fy = y - r0
    top = field[r0, c0] * (1 - fx) + field[r0, c1] * fx
    bot = field[r1, c0] * (1 - fx) + field[r1, c1] * fx
    return float(top * (1 - fy) + bot * fy)


def tangent_walk(
    amap: ActivationMap, start: Point2, k: int, cfg: SamplerConfig
) -> CubicBezierStroke:
    """Grow k control points from a start by walking perpendicular to the
    map gradient (i.e. along iso-contours).

    Each remaining point opens a square window centered on the current
    start and steps along the unit tangent until the next step would
    leave the window (clipped to the canvas); that position becomes the
    next control point and the new start. Zero-gradient positions advance
    along the previous direction (+x before any step is taken).
    """
    if k != 4:
        raise DomainError("strokes carry exactly 4 control points")
    h, w = amap.height, amap.width
    if not (0 <= start.x <= w - 1 and 0 <= start.y <= h - 1):
        raise DomainError(f"start {start} outside canvas {h}x{w}")

    gx, gy = _gradient_fields(amap.data)
    half = round(cfg.window_frac * min(h, w)) / 2.0
    step = cfg.walk_step

    points = [np.array([start.x, start.y], dtype=np.float64)]
    prev_dir: np.ndarray | None = None  # set once the first step is taken
    # A closed iso-contour inside a window would orbit forever; cap at a
    # generous multiple of the window perimeter.
    max_steps = int(np.ceil(16.0 * max(half, 1.0) / step)) + 1
    for _ in range(k - 1):
        center = points[-1]
        x_lo = max(center[0] - half, 0.0)
        x_hi = min(center[0] + half, w - 1.0)
        y_lo = max(center[1] - half, 0.0)
        y_hi = min(center[1] + half, h - 1.0)
        pos = center.copy()
        for _ in range(max_steps):
            g = np.array([_bilinear(gx, pos[0], pos[1]), _bilinear(gy, pos[0], pos[1])])
            norm = float(np.hypot(g[0], g[1]))
            if norm < 1e-12:
                direction = prev_dir if prev_dir is not None else np.array([1.0, 0.0])
            else:
                direction = np.array([-g[1], g[0]]) / norm  # +90 deg rotation
                # continuity with the previous step; before any step (and on
                # exact ties, since window centers see both signs as equally
                # interior) the +90 rotation stands
                if prev_dir is not None and direction @ prev_dir < 0.0:
                    direction = -direction
            nxt = pos + step * direction
            if not (x_lo <= nxt[0] <= x_hi and y_lo <= nxt[1] <= y_hi):
                break
            pos = nxt
            prev_dir = direction
        points.append(pos)
    return CubicBezierStroke(np.array(points))


def init_sketch(
    amap: ActivationMap, spec: SketchSpec, cfg: SamplerConfig, seed: int = 0
) -> VectorSketch:
    """Activation-guided initialization: softmax -> greedy starts -> walks."""
    if (amap.height, amap.width) != spec.canvas:
        raise DomainError(
            f"activation map {amap.height}x{amap.width} does not match canvas {spec.canvas}"
        )
    prob = normalize_map(amap, cfg.temperature)
    starts = sample_starts(prob, spec.n_strokes, cfg, seed=seed)
    walk_field = ActivationMap(
        minmax_normalize(amap.data) if cfg.walk_on == "normalized" else prob
    )
    strokes = tuple(
        tangent_walk(walk_field, p, spec.k_points, cfg) for p in starts.points
    )
    return VectorSketch(strokes=strokes, stroke_width=spec.stroke_width, canvas=spec.canvas)

"""Differentiable rasterizer: soft-coverage rendering of Bezier strokes
and exact backpropagation of per-pixel gradients to control points.

Coverage model, per stroke j and pixel center x:
    d_j(x) = distance from x to the stroke's flattened polyline
    u      = clamp((w/2 + a - d_j) / (2a), 0, 1)      (a = anti-alias halfwidth)
    alpha  = 3u^2 - 2u^3                               (smoothstep)
    v(x)   = prod_j (1 - alpha_j(x))                   (transparency product)

Pixels farther than w/2 + a from every stroke are exactly 1.0 (white).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError
from .geometry import CubicBezierStroke, VectorSketch, _flatten_basis, flatten_array


@dataclass(frozen=True)
class RasterConfig:
    flatten_samples: int = 64
    aa_halfwidth: float = 1.0

    def __post_init__(self):
        if self.flatten_samples < 2:
            raise DomainError("flatten_samples must be >= 2")
        if not self.aa_halfwidth > 0:
            raise DomainError("aa_halfwidth must be positive")


@dataclass
class RasterImage:
    """H x W x C float image in [0, 1], row-major."""

    data: np.ndarray  # (H, W, C) float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ContractError(f"image must be HxWxC with C in (1, 3), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ContractError("image values must be finite and in [0, 1]")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _segment_params(poly: np.ndarray, px, py):
    """Clamped projection parameter s and distance d from pixels (px, py)
    to every segment; inputs broadcast to (S, ...)."""
    q0 = poly[:-1]
    q1 = poly[1:]
    extra = (1,) * (px.ndim - 1)
    ex = (q1[:, 0] - q0[:, 0]).reshape(-1, *extra)
    ey = (q1[:, 1] - q0[:, 1]).reshape(-1, *extra)
    rx = px - q0[:, 0].reshape(-1, *extra)
    ry = py - q0[:, 1].reshape(-1, *extra)
    ee = ex * ex + ey * ey
    num = rx * ex + ry * ey
    s = np.clip(np.divide(num, ee, out=np.zeros_like(num), where=ee > 0.0), 0.0, 1.0)
    d = np.hypot(rx - s * ex, ry - s * ey)
    return s, d


def _stroke_distance_field(
    poly: np.ndarray, reach: float, height: int, width: int, want_segments: bool
):
    """Min distance (and optionally nearest-segment index, ties -> lowest)
    from pixel centers to the polyline, evaluated only near the segments.

    Returns (r0, c0, dmin, seg) where dmin covers the stroke's clipped
    bounding rect; pixels outside every segment window hold +inf (they are
    all farther than reach, so their coverage is exactly zero). seg is
    None when want_segments is False.
    """
    lo = poly.min(axis=0) - reach
    hi = poly.max(axis=0) + reach
    c_lo = max(int(np.ceil(lo[0])), 0)
    c_hi = min(int(np.floor(hi[0])), width - 1)
    r_lo = max(int(np.ceil(lo[1])), 0)
    r_hi = min(int(np.floor(hi[1])), height - 1)
    if c_lo > c_hi or r_lo > r_hi:
        return r_lo, c_lo, np.empty((0, 0)), None
    rect_h = r_hi - r_lo + 1
    rect_w = c_hi - c_lo + 1

    n_seg = len(poly) - 1
    q0 = poly[:-1]
    q1 = poly[1:]
    ext = float(np.abs(q1 - q0).max(initial=0.0))
    win = int(np.ceil(ext + 2.0 * reach)) + 2

    if win >= rect_h or win >= rect_w or n_seg * rect_h * rect_w <= 65536:
        # small rect: evaluate every pixel against every segment
        py, px = np.mgrid[r_lo : r_hi + 1, c_lo : c_hi + 1].astype(np.float64)
        _, d = _segment_params(poly, px[None], py[None])
        dmin = d.min(axis=0)
        seg = d.argmin(axis=0).astype(np.int32) if want_segments else None
        return r_lo, c_lo, dmin, seg

    # fixed-size window per segment, anchored to cover the segment's halo
    # (pixels outside every window are farther than reach from the stroke)
    seg_lo = np.minimum(q0, q1) - reach
    ax = np.clip(np.ceil(seg_lo[:, 0]).astype(int), c_lo, c_hi + 1 - win)
    ay = np.clip(np.ceil(seg_lo[:, 1]).astype(int), r_lo, r_hi + 1 - win)
    offs = np.arange(win)
    px = (ax[:, None] + offs).astype(np.float64)[:, None, :]  # (S, 1, win)
    py = (ay[:, None] + offs).astype(np.float64)[:, :, None]  # (S, win, 1)
    _, d = _segment_params(poly, px, py)  # (S, win, win)

    flat = (
        (ay[:, None, None] + offs[None, :, None] - r_lo) * rect_w
        + (ax[:, None, None] + offs[None, None, :] - c_lo)
    ).ravel()
    dflat = d.ravel()
    dmin = np.full(rect_h * rect_w, np.inf)
    np.minimum.at(dmin, flat, dflat)
    seg = None
    if want_segments:
        seg_flat = np.full(rect_h * rect_w, n_seg, dtype=np.int64)
        at_min = dflat == dmin[flat]
        seg_ids = np.repeat(np.arange(n_seg), win * win)
        np.minimum.at(seg_flat, flat[at_min], seg_ids[at_min])
        seg = np.where(np.isinf(dmin), -1, seg_flat).astype(np.int32).reshape(rect_h, rect_w)
    return r_lo, c_lo, dmin.reshape(rect_h, rect_w), seg


def _alpha_from_distance(d: np.ndarray, width_px: float, aa: float) -> np.ndarray:
    u = np.clip((width_px / 2.0 + aa - d) / (2.0 * aa), 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def render(sketch: VectorSketch, cfg: RasterConfig, channels: int = 3) -> RasterImage:
    """Render a sketch to a coverage image, replicated across channels."""
    if channels not in (1, 3):
        raise ContractError("channels must be 1 or 3")
    height, width = sketch.canvas
    img = np.ones((height, width), dtype=np.float64)
    reach = sketch.stroke_width / 2.0 + cfg.aa_halfwidth
    for stroke in sketch.strokes:
        poly = flatten_array(stroke, cfg.flatten_samples)
        r_lo, c_lo, dmin, _ = _stroke_distance_field(poly, reach, height, width, False)
        if dmin.size == 0:
            continue
        alpha = _alpha_from_distance(dmin, sketch.stroke_width, cfg.aa_halfwidth)
        img[r_lo : r_lo + dmin.shape[0], c_lo : c_lo + dmin.shape[1]] *= 1.0 - alpha
    return RasterImage(np.repeat(img[:, :, None], channels, axis=2))


def backward(sketch: VectorSketch, cfg: RasterConfig, pixel_grad: np.ndarray) -> np.ndarray:
    """d(loss)/d(control points) given d(loss)/d(pixels).

    pixel_grad must match the render output shape (channels are summed,
    since the coverage value is replicated). Returns an (N, 4, 2) array.
    At equidistant-segment ties the lowest segment index carries the
    gradient; pixels in the smoothstep's flat regions (u in {0, 1}) and
    pixels exactly on a polyline (d = 0) contribute zero (subgradients).
    """
    height, width = sketch.canvas
    pg = np.asarray(pixel_grad, dtype=np.float64)
    if pg.ndim == 2:
        pg = pg[:, :, None]
    if pg.shape[:2] != (height, width) or pg.ndim != 3:
        raise ContractError(f"pixel_grad shape {pg.shape} does not match canvas {sketch.canvas}")
    if not np.all(np.isfinite(pg)):
        raise ContractError("pixel_grad must be finite")
    gray_grad = pg.sum(axis=2)

    reach = sketch.stroke_width / 2.0 + cfg.aa_halfwidth
    aa = cfg.aa_halfwidth
    basis = _flatten_basis(cfg.flatten_samples)  # (T, 4)

    # one distance-field pass per stroke, reused for the composite value
    # image and for that stroke's own gradient
    fields = []
    value = np.ones((height, width), dtype=np.float64)
    for stroke in sketch.strokes:
        poly = flatten_array(stroke, cfg.flatten_samples)
        r_lo, c_lo, dmin, seg = _stroke_distance_field(poly, reach, height, width, True)
        fields.append((poly, r_lo, c_lo, dmin, seg))
        if dmin.size:
            alpha = _alpha_from_distance(dmin, sketch.stroke_width, cfg.aa_halfwidth)
            value[r_lo : r_lo + dmin.shape[0], c_lo : c_lo + dmin.shape[1]] *= 1.0 - alpha

    grads = np.zeros((sketch.n_strokes, 4, 2), dtype=np.float64)
    for j, (poly, r_lo, c_lo, dmin, seg) in enumerate(fields):
        if dmin.size == 0:
            continue
        u_raw = (sketch.stroke_width / 2.0 + aa - dmin) / (2.0 * aa)
        active = (u_raw > 0.0) & (u_raw < 1.0) & (dmin > 0.0)
        if not active.any():
            continue
        u = u_raw[active]
        alpha = u * u * (3.0 - 2.0 * u)
        dalpha_du = 6.0 * u * (1.0 - u)
        rows, cols = np.nonzero(active)
        vr = value[r_lo + rows, c_lo + cols]
        others = vr / (1.0 - alpha)  # product of the other strokes' (1 - alpha)
        # dL/dd = gpix * d v/d alpha * d alpha/du * du/dd
        gd = gray_grad[r_lo + rows, c_lo + cols] * (-others) * dalpha_du * (-1.0 / (2.0 * aa))

        px = (c_lo + cols).astype(np.float64)
        py = (r_lo + rows).astype(np.float64)
        segs = seg[active]
        d = dmin[active]
        q0 = poly[segs]
        q1 = poly[segs + 1]
        ex = q1[:, 0] - q0[:, 0]
        ey = q1[:, 1] - q0[:, 1]
        ee = ex * ex + ey * ey
        rx = px - q0[:, 0]
        ry = py - q0[:, 1]
        num = rx * ex + ry * ey
        s = np.clip(np.divide(num, ee, out=np.zeros_like(num), where=ee > 0.0), 0.0, 1.0)
        inv_d = gd / d
        gx = (rx - s * ex) * inv_d
        gy = (ry - s * ey) * inv_d
        # dd/dq0 = -(1-s) e_hat, dd/dq1 = -s e_hat (envelope theorem)
        poly_grad = np.zeros_like(poly)
        np.add.at(poly_grad, segs, -np.stack([(1.0 - s) * gx, (1.0 - s) * gy], axis=1))
        np.add.at(poly_grad, segs + 1, -np.stack([s * gx, s * gy], axis=1))
        grads[j] = basis.T @ poly_grad
    return grads


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    median_rel_error: float
    pass_fraction: float
    n_checked: int
    n_passed: int
    n_skipped: int  # coordinates whose finite difference fell below fd_floor


def _render_dot(sketch: VectorSketch, cfg: RasterConfig, weights: np.ndarray) -> float:
    return float(np.sum(render(sketch, cfg, channels=1).data[:, :, 0] * weights))


def gradcheck(
    sketch: VectorSketch,
    cfg: RasterConfig,
    trials: int,
    seed: int,
    h: float = 1e-3,
    rel_tol: float = 1e-2,
    fd_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() against central finite differences.

    Each trial draws a random pixel-weight field G (the scalar loss is
    sum(G * v)) and checks every control-point coordinate whose central
    finite difference exceeds fd_floor. Deterministic under fixed seed.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    height, width = sketch.canvas
    base = sketch.control_array()
    rel_errors = []
    n_passed = 0
    n_skipped = 0
    for _ in range(trials):
        weights = rng.standard_normal((height, width))
        analytic = backward(sketch, cfg, weights[:, :, None])
        for j in range(base.shape[0]):
            for k in range(4):
                for c in range(2):
                    plus = base.copy()
                    plus[j, k, c] += h
                    minus = base.copy()
                    minus[j, k, c] -= h
                    fd = (
                        _render_dot(sketch.with_control_array(plus), cfg, weights)
                        - _render_dot(sketch.with_control_array(minus), cfg, weights)
                    ) / (2.0 * h)
                    if abs(fd) <= fd_floor:
                        n_skipped += 1
                        continue
                    a = analytic[j, k, c]
                    rel = abs(a - fd) / max(abs(a), abs(fd))
                    rel_errors.append(rel)
                    if rel <= rel_tol:
                        n_passed += 1
    n_checked = len(rel_errors)
    return GradCheckReport(
        max_rel_error=float(np.max(rel_errors)) if rel_errors else 0.0,
        median_rel_error=float(np.median(rel_errors)) if rel_errors else 0.0,
        pass_fraction=(n_passed / n_checked) if n_checked else 1.0,
        n_checked=n_checked,
        n_passed=n_passed,
        n_skipped=n_skipped,
    )


def to_png_bytes(image: RasterImage) -> bytes:
    from io import BytesIO

    from PIL import Image

    arr = np.round(255.0 * image.data).astype(np.uint8)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    buf = BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: RasterImage, path) -> None:
    with open(path, "wb") as f:
        f.write(to_png_bytes(image))


def load_png(path) -> RasterImage:
    from PIL import Image

    pil = Image.open(path)
    if pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB")
    arr = np.asarray(pil, dtype=np.float64) / 255.0
    return RasterImage(arr)

import numpy as np
import pytest

from glyphforge.errors import ContractError, DomainError
from glyphforge.geometry import CubicBezierStroke, VectorSketch
from glyphforge.raster import (
    GradCheckReport,
    RasterConfig,
    RasterImage,
    backward,
    gradcheck,
    load_png,
    render,
    save_png,
)

CFG = RasterConfig()


def random_sketch(rng, n_strokes, canvas=(224, 224), width=3.0, spread=None):
    h, w = canvas
    strokes = []
    for _ in range(n_strokes):
        if spread is None:
            cp = rng.uniform([0, 0], [w - 1, h - 1], size=(4, 2))
        else:
            center = rng.uniform([spread, spread], [w - 1 - spread, h - 1 - spread])
            cp = center + rng.uniform(-spread, spread, size=(4, 2))
        strokes.append(CubicBezierStroke(cp))
    return VectorSketch(strokes=tuple(strokes), stroke_width=width, canvas=canvas)


def supersampled_profile(poly, width_px, canvas, factor=16):
    """Oracle: hard-threshold render with factor x factor subsamples per pixel."""
    h, w = canvas
    offs = (np.arange(factor) + 0.5) / factor - 0.5
    img = np.ones((h, w))
    for r in range(h):
        for c in range(w):
            sub_x = c + offs[None, :]
            sub_y = r + offs[:, None]
            dmin = np.full((factor, factor), np.inf)
            for i in range(len(poly) - 1):
                a, b = poly[i], poly[i + 1]
                ab = b - a
                ee = float(ab @ ab)
                rx = sub_x - a[0]
                ry = sub_y - a[1]
                s = np.clip((rx * ab[0] + ry * ab[1]) / ee, 0, 1) if ee > 0 else 0.0
                d = np.hypot(rx - s * ab[0], ry - s * ab[1])
                dmin = np.minimum(dmin, d)
            img[r, c] = 1.0 - np.mean(dmin <= width_px / 2.0)
    return img


class TestRender:
    def test_all_strokes_outside_canvas(self):
        s = CubicBezierStroke([(-50, -50), (-40, -45), (-30, -40), (-20, -35)])
        sketch = VectorSketch(strokes=(s,), stroke_width=3.0, canvas=(64, 64))
        img = render(sketch, CFG)
        assert np.all(img.data == 1.0)

    def test_degenerate_point_stroke(self):
        s = CubicBezierStroke([(32, 32)] * 4)
        sketch = VectorSketch(strokes=(s,), stroke_width=3.0, canvas=(64, 64))
        img = render(sketch, CFG, channels=1).data[:, :, 0]
        assert img[32, 32] < 0.05
        ys, xs = np.mgrid[0:64, 0:64]
        far = np.hypot(xs - 32.0, ys - 32.0) > 2.5
        assert np.all(img[far] == 1.0)

    def test_supersampling_oracle_horizontal_stroke(self):
        # straight horizontal stroke through the middle of a small canvas
        s = CubicBezierStroke([(4, 16), (12, 16), (20, 16), (28, 16)])
        sketch = VectorSketch(strokes=(s,), stroke_width=3.0, canvas=(32, 32))
        got = render(sketch, CFG, channels=1).data[:, :, 0]
        poly = np.array([[4.0, 16.0], [28.0, 16.0]])
        oracle = supersampled_profile(poly, 3.0, (32, 32))
        # column-wise profile comparison, interior columns only
        cols = slice(6, 27)
        mae = np.mean(np.abs(got[:, cols] - oracle[:, cols]))
        assert mae <= 0.1

    def test_range_invariant(self):
        rng = np.random.default_rng(0)
        for k in range(10):
            sketch = random_sketch(rng, rng.integers(1, 5), canvas=(96, 96))
            img = render(sketch, CFG).data
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_empty_coverage_exactly_white(self):
        rng = np.random.default_rng(1)
        sketch = random_sketch(rng, 2, canvas=(96, 96), spread=10)
        img = render(sketch, CFG, channels=1).data[:, :, 0]
        reach = sketch.stroke_width / 2.0 + CFG.aa_halfwidth
        ys, xs = np.mgrid[0:96, 0:96].astype(float)
        dmin = np.full((96, 96), np.inf)
        for stroke in sketch.strokes:
            from glyphforge.geometry import flatten_array

            poly = flatten_array(stroke, CFG.flatten_samples)
            for i in range(len(poly) - 1):
                a, b = poly[i], poly[i + 1]
                ab = b - a
                ee = float(ab @ ab)
                rx = xs - a[0]
                ry = ys - a[1]
                s = np.clip((rx * ab[0] + ry * ab[1]) / ee, 0, 1) if ee > 0 else 0.0
                dmin = np.minimum(dmin, np.hypot(rx - s * ab[0], ry - s * ab[1]))
        assert np.all(img[dmin >= reach] == 1.0)

    def test_monotone_in_strokes(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            sketch = random_sketch(rng, 3, canvas=(64, 64))
            extra = random_sketch(rng, 1, canvas=(64, 64))
            bigger = VectorSketch(
                strokes=sketch.strokes + extra.strokes,
                stroke_width=sketch.stroke_width,
                canvas=sketch.canvas,
            )
            a = render(sketch, CFG).data
            b = render(bigger, CFG).data
            assert np.all(b <= a + 1e-15)

    def test_mirror_symmetry(self):
        rng = np.random.default_rng(3)
        sketch = random_sketch(rng, 3, canvas=(64, 64))
        w = 64
        mirrored = sketch.with_control_array(
            np.stack(
                [
                    np.column_stack([(w - 1) - s.control_points[:, 0], s.control_points[:, 1]])
                    for s in sketch.strokes
                ]
            )
        )
        a = render(sketch, CFG, channels=1).data[:, :, 0]
        b = render(mirrored, CFG, channels=1).data[:, :, 0]
        assert np.max(np.abs(b - a[:, ::-1])) <= 1e-9


class TestBackward:
    def test_zero_pixel_grad(self):
        rng = np.random.default_rng(4)
        sketch = random_sketch(rng, 2, canvas=(64, 64))
        g = backward(sketch, CFG, np.zeros((64, 64, 3)))
        assert np.all(g == 0.0)

    def test_stroke_outside_band(self):
        s = CubicBezierStroke([(-50, -50), (-40, -45), (-30, -40), (-20, -35)])
        sketch = VectorSketch(strokes=(s,), stroke_width=3.0, canvas=(64, 64))
        g = backward(sketch, CFG, np.ones((64, 64, 3)))
        assert np.all(g == 0.0)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(5)
        sketch = random_sketch(rng, 1, canvas=(64, 64))
        with pytest.raises(ContractError):
            backward(sketch, CFG, np.zeros((32, 32, 3)))

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(6)
        total_checked = 0
        total_passed = 0
        for _ in range(8):
            sketch = random_sketch(rng, int(rng.integers(1, 5)), canvas=(224, 224))
            rep = gradcheck(sketch, CFG, trials=1, seed=int(rng.integers(1 << 31)))
            total_checked += rep.n_checked
            total_passed += rep.n_passed
        assert total_checked > 0
        assert total_passed / total_checked >= 0.95


class TestGradCheck:
    def test_zero_trials_rejected(self):
        rng = np.random.default_rng(7)
        sketch = random_sketch(rng, 1, canvas=(32, 32))
        with pytest.raises(DomainError):
            gradcheck(sketch, CFG, trials=0, seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        sketch = random_sketch(rng, 2, canvas=(64, 64))
        a = gradcheck(sketch, CFG, trials=2, seed=123)
        b = gradcheck(sketch, CFG, trials=2, seed=123)
        assert a == b

    def test_pass_fraction(self):
        rng = np.random.default_rng(9)
        sketch = random_sketch(rng, 2, canvas=(96, 96))
        rep = gradcheck(sketch, CFG, trials=5, seed=11)
        assert isinstance(rep, GradCheckReport)
        assert rep.pass_fraction >= 0.95


class TestRasterImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ContractError):
            RasterImage(np.full((4, 4, 3), 1.5))

    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        img = RasterImage(np.round(rng.uniform(size=(16, 16, 3)) * 255) / 255.0)
        p = tmp_path / "img.png"
        save_png(img, p)
        back = load_png(p)
        assert back.data.shape == (16, 16, 3)
        assert np.max(np.abs(back.data - img.data)) <= 1.0 / 255.0 / 2

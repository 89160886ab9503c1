"""Iterative sketch refinement: gradient steps on control points driven
by the embedding loss through the differentiable rasterizer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GlyphforgeError
from .geometry import SketchSpec, VectorSketch
from .raster import RasterConfig, RasterImage, backward, render
from .sampling import SamplerConfig, init_sketch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizeConfig:
    iterations: int = 1500
    step_size: float = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    checkpoint_every: int = 250
    seed: int = 0
    method: str = "adam"  # "adam" or "gd"

    def __post_init__(self):
        if self.iterations < 1:
            raise DomainError("iterations must be >= 1")
        if not self.step_size > 0:
            raise DomainError("step_size must be positive")
        if self.method not in ("adam", "gd"):
            raise DomainError(f"unknown optimize method: {self.method}")
        if self.checkpoint_every < 1:
            raise DomainError("checkpoint_every must be >= 1")


@dataclass
class OptimizeTrace:
    losses: list[float] = field(default_factory=list)
    checkpoints: list[tuple[int, VectorSketch]] = field(default_factory=list)
    degenerate: bool = False

    def as_table(self) -> str:
        lines = ["iteration\tloss"]
        lines += [f"{i}\t{loss!r}" for i, loss in enumerate(self.losses)]
        return "\n".join(lines) + "\n"


def optimize(
    init: VectorSketch,
    image: RasterImage,
    encoder,
    raster_cfg: RasterConfig | None = None,
    opt_cfg: OptimizeConfig | None = None,
) -> tuple[VectorSketch, OptimizeTrace]:
    """Pull the rendered sketch toward the image's embedding.

    The target embedding is computed once. Each iteration renders the
    sketch, evaluates loss = 1 - cos(embedding, target), backpropagates
    to control points and takes an adaptive-moment (or plain gradient)
    step; control points are clamped to the canvas rectangle. The trace
    carries iterations + 1 loss values (initial loss included) and a
    sketch snapshot at every multiple of checkpoint_every plus the end.
    """
    raster_cfg = raster_cfg or RasterConfig()
    opt_cfg = opt_cfg or OptimizeConfig()

    target = encoder.embed_image(image)
    if target.degenerate:
        log.warning("degenerate target embedding (blank image?): returning init unchanged")
        return init, OptimizeTrace(losses=[1.0], checkpoints=[(0, init)], degenerate=True)

    height, width = init.canvas
    lo = np.array([0.0, 0.0])
    hi = np.array([width - 1.0, height - 1.0])

    params = init.control_array()
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    beta1, beta2 = opt_cfg.betas

    sketch = init
    trace = OptimizeTrace()
    trace.checkpoints.append((0, sketch))
    for it in range(opt_cfg.iterations):
        rendered = render(sketch, raster_cfg)
        res = encoder.loss_and_grad(rendered, target)
        if not np.isfinite(res.loss) or not np.all(np.isfinite(res.pixel_grad)):
            raise GlyphforgeError(f"non-finite loss or gradient at iteration {it}")
        # bridge encoders compute in float32; keep the recorded loss in its
        # mathematical range
        trace.losses.append(float(np.clip(res.loss, 0.0, 2.0)))

        grad = backward(sketch, raster_cfg, res.pixel_grad)
        if opt_cfg.method == "adam":
            m = beta1 * m + (1.0 - beta1) * grad
            v = beta2 * v + (1.0 - beta2) * grad**2
            m_hat = m / (1.0 - beta1 ** (it + 1))
            v_hat = v / (1.0 - beta2 ** (it + 1))
            step = opt_cfg.step_size * m_hat / (np.sqrt(v_hat) + opt_cfg.epsilon)
        else:
            step = opt_cfg.step_size * grad
        params = np.clip(params - step, lo, hi)
        sketch = sketch.with_control_array(params)
        if (it + 1) % opt_cfg.checkpoint_every == 0:
            trace.checkpoints.append((it + 1, sketch))

    final = encoder.loss_and_grad(render(sketch, raster_cfg), target)
    trace.losses.append(float(np.clip(final.loss, 0.0, 2.0)))
    if trace.checkpoints[-1][0] != opt_cfg.iterations:
        trace.checkpoints.append((opt_cfg.iterations, sketch))
    return sketch, trace


def full_pipeline(
    image: RasterImage,
    spec: SketchSpec,
    encoder,
    sampler_cfg: SamplerConfig | None = None,
    raster_cfg: RasterConfig | None = None,
    opt_cfg: OptimizeConfig | None = None,
    seed: int = 0,
) -> tuple[VectorSketch, OptimizeTrace]:
    """activation map -> stroke initialization -> optimization."""
    sampler_cfg = sampler_cfg or SamplerConfig()
    amap = encoder.activation_map(image)
    init = init_sketch(amap, spec, sampler_cfg, seed=seed)
    return optimize(init, image, encoder, raster_cfg=raster_cfg, opt_cfg=opt_cfg)

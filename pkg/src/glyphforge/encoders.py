"""Encoder abstraction: image embedding, activation maps, text embedding
and loss gradients through the encoder.

Two fully local analytic encoders are provided so the whole pipeline runs
and is testable without any neural runtime:

- builtin-semantic: channel-mean grayscale -> first-derivative-of-Gaussian
  bank at orientations {0, 45, 90, 135} deg x scales sigma {2, 4} px
  (kernel side 6*sigma + 1, reflective padding) -> per-filter response
  magnitude -> 7x7 average pooling per map -> concat (392 dims) -> L2 norm.
- builtin-perceptual: same bank, scales averaged per orientation, 14x14
  pooling (784 dims).

These satisfy the same contract as the neural bridge encoders; they make
no claim of approximating them. The bridge client speaks the wire
protocol in glyphforge.wire to an external encoder server.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .errors import CapabilityError, ContractError, TransportError
from .raster import RasterImage
from .sampling import ActivationMap

ORIENTATIONS_DEG = (0.0, 45.0, 90.0, 135.0)
SCALES = (2.0, 4.0)
NATIVE_SIZE = 224


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray
    id: str = ""
    category: str | None = None
    degenerate: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ContractError("embedding values must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class EncoderDescriptor:
    kind: str  # "builtin-semantic" | "builtin-perceptual" | "bridge"
    embedding_dim: int
    capabilities: frozenset[str]
    name: str = ""


@dataclass(frozen=True)
class LossGradResult:
    loss: float
    pixel_grad: np.ndarray
    degenerate: bool = False


# feature norms below this are floating-point residue of the antisymmetric
# kernels on (near-)constant images, not signal
_NORM_FLOOR = 1e-12


def _gauss_kernels(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    radius = int(round(3 * sigma))  # kernel side 6*sigma + 1
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))
    dg = -(x / sigma**2) * g
    dg -= dg.mean()  # exact zero response to constants
    return g, dg


def _corr_axis(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    """Valid correlation with reflective padding along one axis."""
    r = len(k) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (r, r)
    xp = np.pad(x, pad, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, len(k), axis=axis)
    return win @ k


def _corr_axis_adjoint(g: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    """Exact transpose of _corr_axis."""
    r = len(k) // 2
    n = g.shape[axis]
    g = np.moveaxis(g, axis, 0)
    gxp = np.zeros((n + 2 * r,) + g.shape[1:], dtype=np.float64)
    for o in range(2 * r + 1):
        gxp[o : o + n] += k[o] * g
    out = gxp[r : r + n].copy()
    if r > 0:
        out[1 : r + 1] += gxp[:r][::-1]  # left reflect fold
        out[n - 1 - r : n - 1] += gxp[n + r :][::-1]  # right reflect fold
    return np.moveaxis(out, 0, axis)


def _resize_matrix(src: int, dst: int) -> np.ndarray:
    """Bilinear interpolation weights (dst x src), pixel-center mapping."""
    w = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        pos = min(max((i + 0.5) * scale - 0.5, 0.0), src - 1.0)
        lo = int(np.floor(pos))
        hi = min(lo + 1, src - 1)
        f = pos - lo
        w[i, lo] += 1.0 - f
        w[i, hi] += f
    return w


def _avgpool(x: np.ndarray, grid: int) -> np.ndarray:
    h, w = x.shape
    cs_h, cs_w = h // grid, w // grid
    return x.reshape(grid, cs_h, grid, cs_w).mean(axis=(1, 3))


def _avgpool_adjoint(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    grid = g.shape[0]
    cs_h, cs_w = shape[0] // grid, shape[1] // grid
    return np.repeat(np.repeat(g, cs_h, axis=0), cs_w, axis=1) / (cs_h * cs_w)


class BuiltinEncoder:
    """Analytic oriented-energy encoder with exact pixel gradients."""

    def __init__(self, kind: str):
        if kind not in ("builtin-semantic", "builtin-perceptual"):
            raise ContractError(f"unknown builtin encoder kind: {kind}")
        self.kind = kind
        self.pool_grid = 7 if kind == "builtin-semantic" else 14
        self.merge_scales = kind == "builtin-perceptual"
        n_maps = len(ORIENTATIONS_DEG) * (1 if self.merge_scales else len(SCALES))
        self.embedding_dim = n_maps * self.pool_grid**2
        self._kernels = {s: _gauss_kernels(s) for s in SCALES}

    @property
    def descriptor(self) -> EncoderDescriptor:
        return EncoderDescriptor(
            kind=self.kind,
            embedding_dim=self.embedding_dim,
            capabilities=frozenset({"embed_image", "activation_map", "loss_grad"}),
            name=self.kind,
        )

    # -- forward pieces ------------------------------------------------

    def _to_gray(self, image: RasterImage) -> tuple[np.ndarray, dict]:
        data = image.data
        gray = data.mean(axis=2)
        ctx = {"channels": data.shape[2], "in_shape": gray.shape}
        if gray.shape != (NATIVE_SIZE, NATIVE_SIZE):
            wr = _resize_matrix(gray.shape[0], NATIVE_SIZE)
            wc = _resize_matrix(gray.shape[1], NATIVE_SIZE)
            ctx["resize"] = (wr, wc)
            gray = wr @ gray @ wc.T
        return gray, ctx

    def _oriented_responses(self, gray: np.ndarray) -> dict[float, dict[float, np.ndarray]]:
        """Filter responses per scale and orientation (directional
        derivative = cos * d/dx + sin * d/dy, exact for these kernels)."""
        out: dict[float, dict[float, np.ndarray]] = {}
        for s in SCALES:
            g, dg = self._kernels[s]
            rx = _corr_axis(_corr_axis(gray, dg, axis=1), g, axis=0)
            ry = _corr_axis(_corr_axis(gray, g, axis=1), dg, axis=0)
            out[s] = {}
            for theta in ORIENTATIONS_DEG:
                rad = np.deg2rad(theta)
                out[s][theta] = np.cos(rad) * rx + np.sin(rad) * ry
        return out

    def _features(self, gray: np.ndarray) -> tuple[np.ndarray, dict]:
        resps = self._oriented_responses(gray)
        maps = []
        if self.merge_scales:
            for theta in ORIENTATIONS_DEG:
                maps.append(sum(np.abs(resps[s][theta]) for s in SCALES) / len(SCALES))
        else:
            for s in SCALES:
                for theta in ORIENTATIONS_DEG:
                    maps.append(np.abs(resps[s][theta]))
        pooled = [_avgpool(m, self.pool_grid) for m in maps]
        feat = np.concatenate([p.ravel() for p in pooled])
        return feat, {"responses": resps}

    def _feature_backward(self, dfeat: np.ndarray, ctx_resp: dict) -> np.ndarray:
        resps = ctx_resp["responses"]
        grid = self.pool_grid
        per_map = grid * grid
        idx = 0
        if self.merge_scales:
            order = [(None, theta) for theta in ORIENTATIONS_DEG]
        else:
            order = [(s, theta) for s in SCALES for theta in ORIENTATIONS_DEG]
        # accumulate d/d(rx), d/d(ry) per scale before the adjoint
        # correlations (all maps are linear in rx, ry)
        drx = {s: np.zeros((NATIVE_SIZE, NATIVE_SIZE)) for s in SCALES}
        dry = {s: np.zeros((NATIVE_SIZE, NATIVE_SIZE)) for s in SCALES}
        for s, theta in order:
            dpool = dfeat[idx : idx + per_map].reshape(grid, grid)
            idx += per_map
            dmag = _avgpool_adjoint(dpool, (NATIVE_SIZE, NATIVE_SIZE))
            scales = SCALES if s is None else (s,)
            scale_w = 1.0 / len(SCALES) if s is None else 1.0
            rad = np.deg2rad(theta)
            for sc in scales:
                dresp = scale_w * dmag * np.sign(resps[sc][theta])
                drx[sc] += np.cos(rad) * dresp
                dry[sc] += np.sin(rad) * dresp
        dgray = np.zeros((NATIVE_SIZE, NATIVE_SIZE))
        for s in SCALES:
            g, dg = self._kernels[s]
            dgray += _corr_axis_adjoint(_corr_axis_adjoint(drx[s], g, axis=0), dg, axis=1)
            dgray += _corr_axis_adjoint(_corr_axis_adjoint(dry[s], dg, axis=0), g, axis=1)
        return dgray

    # -- public operations ----------------------------------------------

    def embed_image(self, image: RasterImage, id: str = "", category: str | None = None) -> Embedding:
        gray, _ = self._to_gray(image)
        feat, _ = self._features(gray)
        norm = float(np.linalg.norm(feat))
        if norm <= _NORM_FLOOR:
            return Embedding(values=np.zeros(self.embedding_dim), id=id, category=category, degenerate=True)
        return Embedding(values=feat / norm, id=id, category=category)

    def activation_map(self, image: RasterImage) -> ActivationMap:
        gray, ctx = self._to_gray(image)
        resps = self._oriented_responses(gray)
        mean_map = sum(
            np.abs(resps[s][t]) for s in SCALES for t in ORIENTATIONS_DEG
        ) / (len(SCALES) * len(ORIENTATIONS_DEG))
        h, w = ctx["in_shape"]
        if (h, w) != mean_map.shape:
            wr = _resize_matrix(NATIVE_SIZE, h)
            wc = _resize_matrix(NATIVE_SIZE, w)
            mean_map = wr @ mean_map @ wc.T
        return ActivationMap(np.maximum(mean_map, 0.0))

    def loss_and_grad(self, image: RasterImage, target: Embedding) -> LossGradResult:
        if target.dim != self.embedding_dim:
            raise ContractError(
                f"target dim {target.dim} does not match encoder dim {self.embedding_dim}"
            )
        gray, gctx = self._to_gray(image)
        feat, fctx = self._features(gray)
        fnorm = float(np.linalg.norm(feat))
        tnorm = float(np.linalg.norm(target.values))
        shape = image.data.shape
        if fnorm <= _NORM_FLOOR or tnorm <= _NORM_FLOOR:
            return LossGradResult(loss=1.0, pixel_grad=np.zeros(shape), degenerate=True)
        e = feat / fnorm
        t = target.values / tnorm
        cos = float(e @ t)
        dfeat = -(t - cos * e) / fnorm  # d(1 - cos)/d feat
        dgray = self._feature_backward(dfeat, fctx)
        if "resize" in gctx:
            wr, wc = gctx["resize"]
            dgray = wr.T @ dgray @ wc
        pixel_grad = np.broadcast_to(
            (dgray / shape[2])[:, :, None], shape
        ).copy()
        return LossGradResult(loss=1.0 - cos, pixel_grad=pixel_grad)

    def embed_text(self, text: str) -> Embedding:
        raise CapabilityError(f"{self.kind} encoder does not embed text")


class BridgeEncoder:
    """Client for an external encoder served over the wire protocol."""

    kind = "bridge"

    def __init__(self, address: str, timeout: float = 120.0):
        self.address = address
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ContractError(f"bridge address must be host:port, got {address!r}")
        try:
            self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        except OSError as e:
            raise TransportError(f"cannot reach bridge at {address}: {e}") from e
        self._rfile = self._sock.makefile("rb")
        self._descriptor = self._describe()

    def close(self):
        try:
            self._rfile.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _call(self, opcode: int, payload: bytes) -> bytes:
        try:
            self._sock.sendall(wire.pack_frame(opcode, payload))
            status, body = wire.read_frame(self._rfile)
        except OSError as e:
            raise TransportError(f"bridge i/o failure: {e}") from e
        if status == wire.STATUS_OK:
            return body
        message = body.decode("utf-8", errors="replace")
        if status == wire.STATUS_CAPABILITY:
            raise CapabilityError(message or "capability not served")
        raise TransportError(f"bridge status {status}: {message}")

    def _describe(self) -> EncoderDescriptor:
        body = self._call(wire.OP_DESCRIBE, b"")
        name, off = wire.unpack_text(body)
        import struct

        (dim,) = struct.unpack_from("<I", body, off)
        mask = body[off + 4]
        caps = frozenset(c for c, bit in wire.CAP_BITS.items() if mask & bit)
        return EncoderDescriptor(kind="bridge", embedding_dim=dim, capabilities=caps, name=name)

    @property
    def descriptor(self) -> EncoderDescriptor:
        return self._descriptor

    @property
    def embedding_dim(self) -> int:
        return self._descriptor.embedding_dim

    def _require(self, cap: str):
        if cap not in self._descriptor.capabilities:
            raise CapabilityError(f"bridge encoder {self._descriptor.name!r} lacks {cap}")

    @staticmethod
    def _image_payload(image: RasterImage) -> bytes:
        data = image.data
        if data.shape[2] == 1:
            data = np.repeat(data, 3, axis=2)
        return wire.pack_tensor(data)

    def _wrap_embedding(self, values: np.ndarray, id: str = "", category=None) -> Embedding:
        degenerate = not np.any(values)
        return Embedding(values=values, id=id, category=category, degenerate=degenerate)

    def embed_image(self, image: RasterImage, id: str = "", category: str | None = None) -> Embedding:
        self._require("embed_image")
        body = self._call(wire.OP_EMBED_IMAGE, self._image_payload(image))
        values, _ = wire.unpack_tensor(body)
        return self._wrap_embedding(values.reshape(-1), id=id, category=category)

    def activation_map(self, image: RasterImage) -> ActivationMap:
        self._require("activation_map")
        body = self._call(wire.OP_ACTIVATION_MAP, self._image_payload(image))
        values, _ = wire.unpack_tensor(body)
        amap = np.maximum(values, 0.0)
        h, w = image.data.shape[:2]
        if amap.shape != (h, w):
            wr = _resize_matrix(amap.shape[0], h)
            wc = _resize_matrix(amap.shape[1], w)
            amap = wr @ amap @ wc.T
        return ActivationMap(np.maximum(amap, 0.0))

    def loss_and_grad(self, image: RasterImage, target: Embedding) -> LossGradResult:
        self._require("loss_grad")
        payload = self._image_payload(image) + wire.pack_tensor(target.values)
        body = self._call(wire.OP_LOSS_AND_GRAD, payload)
        import struct

        (loss,) = struct.unpack_from("<f", body, 0)
        grad, _ = wire.unpack_tensor(body, 4)
        if image.data.shape[2] == 1 and grad.ndim == 3:
            grad = grad.sum(axis=2, keepdims=True)
        return LossGradResult(loss=float(loss), pixel_grad=grad)

    def embed_text(self, text: str, id: str = "", category: str | None = None) -> Embedding:
        self._require("embed_text")
        body = self._call(wire.OP_EMBED_TEXT, wire.pack_text(text))
        values, _ = wire.unpack_tensor(body)
        return self._wrap_embedding(values.reshape(-1), id=id, category=category)


def get_encoder(selector: str):
    """Resolve an encoder selector: builtin-semantic, builtin-perceptual,
    or bridge:<host:port>."""
    if selector in ("builtin-semantic", "builtin-perceptual"):
        return BuiltinEncoder(selector)
    if selector.startswith("bridge:"):
        return BridgeEncoder(selector.split(":", 1)[1])
    raise ContractError(f"unknown encoder selector: {selector!r}")

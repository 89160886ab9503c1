"""Torch-backed encoders served over the bridge protocol.

Two model selectors:
- semantic: CLIP ViT-B/32 image/text embeddings (512 dims) plus VGG-19
  conv3_1 mean activation maps and cosine-loss pixel gradients.
- perceptual: the VGG-19 layer preceding the output layer (second fc,
  post-ReLU, 4096 dims) as the embedding, same activation maps.

Pretrained weights are loaded when available. When they cannot be
fetched (offline sandbox), the exact same architectures are built with
seeded random weights and the encoder name gains an "-untrained" suffix;
protocol behavior, shapes and determinism are unchanged, but embedding
SEMANTICS are meaningless in that mode. Text embedding falls back to a
byte-level tokenizer when the CLIP BPE assets are unavailable.

Activation maps are taken post-ReLU at conv3_1 (nonnegative), averaged
over the 256 channels, and returned at the layer's native resolution
without normalization (the client normalizes). Embeddings are
L2-normalized server-side. All models run on CPU unless a device is
given.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

CLIP_MODEL_ID = "openai/clip-vit-base-patch32"

_CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
_CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)

VGG_CONV3_1_INDEX = 10  # features[10] = conv3_1; features[11] = its ReLU


def _to_tensor(image: np.ndarray, device) -> torch.Tensor:
    """H x W x 3 float array in [0,1] -> 1 x 3 x 224 x 224 tensor."""
    t = torch.from_numpy(np.array(image, dtype=np.float32, copy=True))
    t = t.permute(2, 0, 1).unsqueeze(0).to(device)
    if t.shape[-2:] != (224, 224):
        t = F.interpolate(t, size=(224, 224), mode="bilinear", align_corners=False)
    return t


def _normalize(t: torch.Tensor, mean, std) -> torch.Tensor:
    m = torch.tensor(mean, device=t.device).view(1, 3, 1, 1)
    s = torch.tensor(std, device=t.device).view(1, 3, 1, 1)
    return (t - m) / s


def _load_pretrained(cls, model_id: str):
    """Local HF cache first (fast offline check), then the network."""
    try:
        return cls.from_pretrained(model_id, local_files_only=True)
    except Exception:
        pass
    try:
        return cls.from_pretrained(model_id)
    except Exception as e:
        log.warning("pretrained %s unavailable (%s); falling back", model_id, type(e).__name__)
        return None


def _build_vgg(pretrained: bool, seed: int = 0) -> tuple[torch.nn.Module, bool]:
    import torchvision.models as tvm

    if pretrained:
        try:
            return tvm.vgg19(weights=tvm.VGG19_Weights.IMAGENET1K_V1).eval(), True
        except Exception as e:
            log.warning("pretrained VGG-19 unavailable (%s); using random weights", type(e).__name__)
    torch.manual_seed(seed)
    return tvm.vgg19(weights=None).eval(), False


class _ByteTokenizer:
    """Deterministic stand-in when CLIP BPE assets are unavailable:
    UTF-8 bytes as token ids between BOS and EOS."""

    def __init__(self, bos: int, eos: int, max_len: int = 77):
        self.bos = bos
        self.eos = eos
        self.max_len = max_len

    def __call__(self, text: str) -> torch.Tensor:
        ids = [self.bos] + list(text.encode("utf-8"))[: self.max_len - 2] + [self.eos]
        return torch.tensor([ids], dtype=torch.long)


class SemanticBackend:
    """CLIP ViT-B/32 embeddings with VGG-19 conv3_1 activation maps."""

    capabilities = 0b1111

    def __init__(self, device: str = "cpu", untrained: bool = False,
                 activation_pre_relu: bool = False):
        from transformers import CLIPConfig, CLIPModel

        self.device = torch.device(device)
        self.pretrained = False
        if not untrained:
            self.clip = _load_pretrained(CLIPModel, CLIP_MODEL_ID)
            self.pretrained = self.clip is not None
        if not self.pretrained:
            torch.manual_seed(0)
            self.clip = CLIPModel(CLIPConfig())
        self.clip.eval().to(self.device)
        self.dim = self.clip.config.projection_dim

        self.tokenizer = None
        if self.pretrained:
            from transformers import CLIPTokenizer

            self.tokenizer = _load_pretrained(CLIPTokenizer, CLIP_MODEL_ID)
        if self.tokenizer is None:
            text_cfg = self.clip.config.text_config
            self.tokenizer = _ByteTokenizer(text_cfg.bos_token_id, text_cfg.eos_token_id)

        self.vgg, _ = _build_vgg(self.pretrained)
        self.vgg.to(self.device)
        cut = VGG_CONV3_1_INDEX + (0 if activation_pre_relu else 1)
        self.activation_head = self.vgg.features[: cut + 1]
        self.name = "clip-vit-b32" + ("" if self.pretrained else "-untrained")

    def _image_features(self, t: torch.Tensor) -> torch.Tensor:
        vision = self.clip.vision_model(pixel_values=_normalize(t, _CLIP_MEAN, _CLIP_STD))
        feats = self.clip.visual_projection(vision.pooler_output)
        return F.normalize(feats, dim=-1)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            feats = self._image_features(_to_tensor(image, self.device))
        return feats[0].cpu().numpy()

    def embed_text(self, text: str) -> np.ndarray:
        if isinstance(self.tokenizer, _ByteTokenizer):
            input_ids = self.tokenizer(text).to(self.device)
            attention = torch.ones_like(input_ids)
        else:
            toks = self.tokenizer([text], padding=True, return_tensors="pt")
            input_ids = toks["input_ids"].to(self.device)
            attention = toks["attention_mask"].to(self.device)
        with torch.no_grad():
            text = self.clip.text_model(input_ids=input_ids, attention_mask=attention)
            feats = F.normalize(self.clip.text_projection(text.pooler_output), dim=-1)
        return feats[0].cpu().numpy()

    def activation_map(self, image: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            t = _normalize(_to_tensor(image, self.device), _IMAGENET_MEAN, _IMAGENET_STD)
            acts = self.activation_head(t)  # 1 x 256 x 56 x 56
        return acts[0].mean(dim=0).cpu().numpy()

    def loss_and_grad(self, image: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
        t = _to_tensor(image, self.device).requires_grad_(True)
        feats = self._image_features(t)
        tv = torch.from_numpy(np.array(target, dtype=np.float32, copy=True)).to(self.device)
        tv = F.normalize(tv.reshape(-1), dim=-1)
        loss = 1.0 - feats[0] @ tv
        loss.backward()
        grad = t.grad[0].permute(1, 2, 0).cpu().numpy()
        return float(loss.item()), grad


class PerceptualBackend:
    """VGG-19 penultimate-layer features (4096 dims) as the embedding."""

    capabilities = 0b0111  # no text embedding

    def __init__(self, device: str = "cpu", untrained: bool = False,
                 activation_pre_relu: bool = False):
        self.device = torch.device(device)
        self.vgg, self.pretrained = _build_vgg(not untrained)
        self.vgg.to(self.device)
        cut = VGG_CONV3_1_INDEX + (0 if activation_pre_relu else 1)
        self.activation_head = self.vgg.features[: cut + 1]
        self.head = self.vgg.classifier[:6]  # up to the second fc ReLU
        self.dim = 4096
        self.name = "vgg19-penultimate" + ("" if self.pretrained else "-untrained")

    def _features(self, t: torch.Tensor) -> torch.Tensor:
        x = self.vgg.features(_normalize(t, _IMAGENET_MEAN, _IMAGENET_STD))
        x = self.vgg.avgpool(x)
        feats = self.head(torch.flatten(x, 1))
        return F.normalize(feats, dim=-1)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            feats = self._features(_to_tensor(image, self.device))
        return feats[0].cpu().numpy()

    def embed_text(self, text: str) -> np.ndarray:
        raise NotImplementedError("perceptual encoder does not embed text")

    def activation_map(self, image: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            t = _normalize(_to_tensor(image, self.device), _IMAGENET_MEAN, _IMAGENET_STD)
            acts = self.activation_head(t)
        return acts[0].mean(dim=0).cpu().numpy()

    def loss_and_grad(self, image: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
        t = _to_tensor(image, self.device).requires_grad_(True)
        feats = self._features(t)
        tv = torch.from_numpy(np.array(target, dtype=np.float32, copy=True)).to(self.device)
        tv = F.normalize(tv.reshape(-1), dim=-1)
        loss = 1.0 - feats[0] @ tv
        loss.backward()
        grad = t.grad[0].permute(1, 2, 0).cpu().numpy()
        return float(loss.item()), grad


def build_backend(model: str, device: str = "cpu", untrained: bool = False,
                  activation_pre_relu: bool = False):
    if model == "semantic":
        return SemanticBackend(device=device, untrained=untrained,
                               activation_pre_relu=activation_pre_relu)
    if model == "perceptual":
        return PerceptualBackend(device=device, untrained=untrained,
                                 activation_pre_relu=activation_pre_relu)
    raise ValueError(f"unknown model selector: {model!r}")

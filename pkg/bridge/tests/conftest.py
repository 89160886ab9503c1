import functools

import pytest


@functools.lru_cache(maxsize=1)
def pretrained_available() -> bool:
    """True when the CLIP ViT-B/32 weights are present in the local
    HF cache (this sandbox has no route to the weight hosts)."""
    try:
        from transformers import CLIPModel

        CLIPModel.from_pretrained("openai/clip-vit-base-patch32", local_files_only=True)
        return True
    except Exception:
        return False


requires_pretrained = pytest.mark.skipif(
    not pretrained_available(),
    reason=(
        "pretrained CLIP/VGG weights unavailable (no route to model hosts in "
        "this environment); this criterion needs real model semantics"
    ),
)

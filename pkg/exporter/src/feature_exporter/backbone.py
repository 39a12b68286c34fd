"""Backbone loading and the embedding interface.

The production backbone is DINOv2 (ViT-B/14 or ViT-L/14) with published
pretrained weights, reached through torch.hub with a transformers-hub
fallback.  The exported row is the class-token output of the final
pooling layer.  A deterministic stub backbone is provided for offline
smoke runs and format-level testing; it shares the whole preprocessing
and batching path with the real models.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

FEATURE_DIMS = {"base": 768, "large": 1024}
HUB_MODELS = {"base": "dinov2_vitb14", "large": "dinov2_vitl14"}
HF_MODELS = {"base": "facebook/dinov2-base", "large": "facebook/dinov2-large"}

# published preprocessing statistics for the DINOv2 release
IMAGE_SIZE = 224
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)


class WeightsUnavailableError(RuntimeError):
    """Pretrained weights could not be obtained (typically: no network)."""


def _hash_parameters(named_parameters) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(named_parameters, key=lambda item: item[0]):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


class Dinov2Backbone:
    """Pretrained DINOv2 wrapper exposing class-token pooled features."""

    def __init__(self, module, model_id: str, dim: int, flavor: str):
        self.module = module.eval()
        self.model_id = model_id
        self.dim = dim
        self._flavor = flavor  # "hub" or "transformers"
        self.pooling = "class_token"

    def weight_hash(self) -> str:
        return _hash_parameters(self.module.named_parameters())

    @torch.no_grad()
    def embed_batch(self, batch: torch.Tensor) -> np.ndarray:
        if self._flavor == "hub":
            out = self.module(batch)  # hub forward returns the class token
        else:
            out = self.module(pixel_values=batch).pooler_output
        return out.cpu().numpy().astype(np.float32)


class StubBackbone:
    """Deterministic stand-in: average-pools the normalized image to a
    16x16 grid and applies a fixed random projection.  Content-sensitive
    and reproducible, with the same dims as the real models."""

    def __init__(self, model_size: str = "base", seed: int = 0):
        self.dim = FEATURE_DIMS[model_size]
        self.model_id = f"stub-avgpool-projection-{model_size}"
        self.pooling = "stub_avgpool_projection"
        rng = np.random.default_rng(seed)
        self._projection = (
            rng.standard_normal((3 * 16 * 16, self.dim)).astype(np.float32) / 16.0
        )

    def weight_hash(self) -> str:
        return hashlib.sha256(self._projection.tobytes()).hexdigest()

    @torch.no_grad()
    def embed_batch(self, batch: torch.Tensor) -> np.ndarray:
        pooled = torch.nn.functional.adaptive_avg_pool2d(batch, 16)
        flat = pooled.flatten(1).cpu().numpy().astype(np.float32)
        return flat @ self._projection


def load_backbone(model_size: str = "base", kind: str = "dinov2"):
    """Load the requested backbone; ``kind='stub'`` never touches the network."""
    if model_size not in FEATURE_DIMS:
        raise ValueError(f"unknown model size {model_size!r}")
    if kind == "stub":
        return StubBackbone(model_size)
    if kind != "dinov2":
        raise ValueError(f"unknown backbone kind {kind!r}")
    errors = []
    try:
        module = torch.hub.load("facebookresearch/dinov2", HUB_MODELS[model_size])
        return Dinov2Backbone(module, HUB_MODELS[model_size],
                              FEATURE_DIMS[model_size], "hub")
    except Exception as exc:  # hub unreachable or weights missing
        errors.append(f"torch.hub: {exc}")
    try:
        from transformers import AutoModel

        module = AutoModel.from_pretrained(HF_MODELS[model_size])
        return Dinov2Backbone(module, HF_MODELS[model_size],
                              FEATURE_DIMS[model_size], "transformers")
    except Exception as exc:
        errors.append(f"transformers: {exc}")
    raise WeightsUnavailableError(
        "could not obtain pretrained DINOv2 weights: " + "; ".join(errors)
    )

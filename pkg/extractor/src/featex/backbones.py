"""Encoder backbones.

Two families:

* ``hash-<dim>`` — a deterministic content-hash embedding (no weights,
  no network). Each input is mapped to a fixed pseudo-random unit vector
  derived from a SHA-256 digest of its content, so identical inputs give
  identical rows. Useful for pipeline tests and format validation, not
  for recognition quality.
* ``clip:<model-id>`` — a frozen pre-trained contrastive image/text
  encoder loaded through the ``transformers`` library (requires the
  optional ``clip`` extra and downloadable weights).
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

from .errors import BackboneUnavailable


class Backbone(Protocol):
    dim: int

    def embed_images(self, images: Sequence[Image.Image]) -> np.ndarray: ...

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray: ...


def _digest_vector(payload: bytes, dim: int) -> np.ndarray:
    digest = hashlib.sha256(payload).digest()
    seed = np.frombuffer(digest, dtype=np.uint32)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class HashBackbone:
    """Deterministic stand-in encoder keyed on input content."""

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ValueError("hash backbone dim must be >= 2")
        self.dim = dim

    def embed_images(self, images: Sequence[Image.Image]) -> np.ndarray:
        rows = np.empty((len(images), self.dim))
        for i, im in enumerate(images):
            rgb = im.convert("RGB")
            payload = rgb.tobytes() + str(rgb.size).encode()
            rows[i] = _digest_vector(payload, self.dim)
        return rows

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = np.empty((len(texts), self.dim))
        for i, t in enumerate(texts):
            rows[i] = _digest_vector(t.encode("utf-8"), self.dim)
        return rows


class ClipBackbone:
    """Frozen CLIP-style dual encoder via transformers (lazy import)."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:
            raise BackboneUnavailable(
                f"clip backbone needs torch+transformers: {e}"
            ) from e
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as e:
            raise BackboneUnavailable(f"cannot load weights for {model_id}: {e}") from e
        self._torch = torch
        self._model.eval()
        self.dim = int(self._model.config.projection_dim)

    def embed_images(self, images) -> np.ndarray:
        inputs = self._processor(images=list(images), return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float64)

    def embed_texts(self, texts) -> np.ndarray:
        inputs = self._processor(
            text=list(texts), return_tensors="pt", padding=True
        )
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float64)


def load_backbone(identifier: str) -> Backbone:
    """``hash`` / ``hash-<dim>`` or ``clip:<model-id>``."""
    if identifier == "hash":
        return HashBackbone()
    if identifier.startswith("hash-"):
        return HashBackbone(int(identifier.split("-", 1)[1]))
    if identifier.startswith("clip:"):
        return ClipBackbone(identifier.split(":", 1)[1])
    raise BackboneUnavailable(f"unknown backbone {identifier!r}")

"""Embedding backends.

The default ``offline`` backend is fully deterministic and needs no
model weights: text becomes hashed bag-of-ngram features, images become
projected thumbnail/histogram statistics. The ``hf`` backend wraps
pretrained dual encoders for real runs and is only imported on demand,
so environments without the model stack can still run extraction.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np
from PIL import Image

_TOKEN_RE = re.compile(r"[a-z0-9']+")
_PROJECTION_SEED = 0x5EED


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _hash_index(token: str, dim: int) -> tuple[int, float]:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    index = int.from_bytes(digest[:8], "little") % dim
    sign = 1.0 if digest[8] % 2 == 0 else -1.0
    return index, sign


class HashingTextEmbedder:
    """Feature-hashed unigrams and bigrams, L2-normalized."""

    def __init__(self, dim: int = 384):
        self.dim = dim
        self.name = f"hashing-text-{dim}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        toks = _tokens(text)
        for gram in toks + [f"{a}_{b}" for a, b in zip(toks, toks[1:])]:
            index, sign = _hash_index(gram, self.dim)
            vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class ImageStatEmbedder:
    """Thumbnail, histogram, and tone statistics behind a fixed random
    projection; deterministic across runs and machines."""

    def __init__(self, dim: int = 384):
        self.dim = dim
        self.name = f"image-stats-{dim}"
        rng = np.random.default_rng(_PROJECTION_SEED)
        self._projection = rng.normal(size=(dim, 95)) / np.sqrt(95)

    def features(self, path: str | Path) -> np.ndarray:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            width, height = rgb.size
            thumb = np.asarray(rgb.resize((8, 8), Image.BILINEAR), dtype=np.float64) / 255.0
        gray = thumb.mean(axis=2).reshape(-1)  # 64
        hists = [
            np.histogram(thumb[:, :, c].reshape(-1), bins=8, range=(0.0, 1.0))[0] / 64.0
            for c in range(3)
        ]  # 24
        means = thumb.reshape(-1, 3).mean(axis=0)  # 3
        stds = thumb.reshape(-1, 3).std(axis=0)  # 3
        aspect = np.log(width / height)
        return np.concatenate([gray, *hists, means, stds, [aspect]])

    def embed(self, path: str | Path) -> np.ndarray:
        vec = self._projection @ self.features(path)
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class HfClipEmbedder:
    """Dual-encoder backend over a local CLIP-style checkpoint.

    Requires the optional ``hf`` extra and a downloaded model; kept
    import-lazy so offline environments never touch it.
    """

    def __init__(self, model_path: str, device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise RuntimeError(
                "the hf backend needs the optional [hf] dependencies installed"
            ) from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_path).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_path)
        self.device = device
        self.name = f"hf-clip:{model_path}"

    def embed_text(self, text: str) -> np.ndarray:  # pragma: no cover - needs weights
        inputs = self.processor(text=[text], return_tensors="pt", truncation=True).to(self.device)
        with self._torch.no_grad():
            out = self.model.get_text_features(**inputs)
        return out[0].cpu().numpy().astype(np.float64)

    def embed_image(self, path: str | Path) -> np.ndarray:  # pragma: no cover - needs weights
        with Image.open(path) as img:
            inputs = self.processor(images=img.convert("RGB"), return_tensors="pt").to(self.device)
        with self._torch.no_grad():
            out = self.model.get_image_features(**inputs)
        return out[0].cpu().numpy().astype(np.float64)


class HfSentenceEmbedder:
    """Sentence-encoder backend for captions, contexts, and node labels."""

    def __init__(self, model_path: str, device: str = "cpu"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise RuntimeError(
                "the hf backend needs the optional [hf] dependencies installed"
            ) from exc
        self.model = SentenceTransformer(model_path, device=device)
        self.name = f"hf-sentence:{model_path}"

    def embed(self, text: str) -> np.ndarray:  # pragma: no cover - needs weights
        return np.asarray(self.model.encode([text])[0], dtype=np.float64)

"""Teacher captions.

Two prompt templates are available, one per dataset family: the
context template asks for theme/emotion/target analysis, the describe
template asks for an uncensored visual description. The offline
captioner renders a deterministic description from image statistics
and the overlaid text; the ``hf`` backend sends the selected prompt to
a local vision-language checkpoint.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

PROMPT_TEMPLATES = {
    "meme-context": (
        "You are given a meme. Write a detailed caption which captures the "
        "context, emotions and the theme of the meme. Identify and elaborate "
        "on the primary subject or target of the meme, which could include "
        "specific groups or individuals such as Muslims, Jews, transgender "
        "individuals, gays, Black people, Asians, etc."
    ),
    "meme-describe": (
        "You are given a meme. Write a detailed caption that captures the "
        "context, emotions, and theme of the meme. Describe all visible "
        "elements in the image, including the ethnicity, gender, and other "
        "characteristics of individuals. Do not omit or censor any details."
    ),
}

_COLOR_NAMES = {
    (1.0, 0.0, 0.0): "red",
    (0.0, 1.0, 0.0): "green",
    (0.0, 0.0, 1.0): "blue",
    (1.0, 1.0, 0.0): "yellow",
    (1.0, 0.0, 1.0): "magenta",
    (0.0, 1.0, 1.0): "cyan",
    (1.0, 1.0, 1.0): "light",
    (0.0, 0.0, 0.0): "dark",
}

_STOP = frozenset("a an and are in is it of on or the this to with".split())


def dominant_color_name(means: np.ndarray) -> str:
    anchors = np.array(list(_COLOR_NAMES))
    names = list(_COLOR_NAMES.values())
    distances = np.linalg.norm(anchors - means, axis=1)
    return names[int(np.argmin(distances))]


class TemplateCaptioner:
    """Deterministic caption stand-in labeled as such in job metadata.

    It grounds the caption in measurable image properties plus the
    overlaid text, so captions vary meaningfully across records without
    any pretrained model in the loop.
    """

    name = "offline-template"

    def __init__(self, prompt_template: str = "meme-context"):
        if prompt_template not in PROMPT_TEMPLATES:
            raise ValueError(f"unknown prompt template {prompt_template!r}")
        self.prompt_template = prompt_template

    def caption(self, image_path: str | Path, text: str) -> str:
        with Image.open(image_path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        means = rgb.reshape(-1, 3).mean(axis=0)
        brightness = "bright" if means.mean() > 0.5 else "muted"
        color = dominant_color_name(means)
        keywords = [t for t in text.lower().split() if t and t not in _STOP][:4]
        theme = " ".join(keywords) if keywords else "the overlaid statement"
        base = (
            f"A meme image in {brightness} {color} tones with the overlaid text "
            f'"{text}".'
        )
        if self.prompt_template == "meme-context":
            return f"{base} The combination of image and text centers on {theme}."
        return f"{base} The visual shows a {color} dominated composition; the text reads {theme}."


class HfCaptioner:
    """Vision-language captioning over a local checkpoint."""

    def __init__(self, model_path: str, prompt_template: str = "meme-context",
                 device: str = "cpu", max_new_tokens: int = 160):
        if prompt_template not in PROMPT_TEMPLATES:
            raise ValueError(f"unknown prompt template {prompt_template!r}")
        try:
            import torch
            from transformers import AutoProcessor, AutoModelForVision2Seq
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise RuntimeError(
                "the hf backend needs the optional [hf] dependencies installed"
            ) from exc
        self._torch = torch
        self.processor = AutoProcessor.from_pretrained(model_path)
        self.model = AutoModelForVision2Seq.from_pretrained(model_path).to(device).eval()
        self.prompt_template = prompt_template
        self.device = device
        self.max_new_tokens = max_new_tokens
        self.name = f"hf-caption:{model_path}"

    def caption(self, image_path: str | Path, text: str) -> str:  # pragma: no cover
        prompt = PROMPT_TEMPLATES[self.prompt_template]
        with Image.open(image_path) as img:
            inputs = self.processor(
                images=img.convert("RGB"), text=prompt, return_tensors="pt"
            ).to(self.device)
        with self._torch.no_grad():
            output = self.model.generate(
                **inputs, max_new_tokens=self.max_new_tokens, do_sample=False
            )
        return self.processor.batch_decode(output, skip_special_tokens=True)[0].strip()

"""Relevance scoring via pseudo-perplexity.

A concept is scored by how predictable its label tokens are given the
record context: each token's negative log-likelihood is averaged and
exponentiated, so lower scores mean higher semantic relevance. The
offline scorer realizes this with a context-adaptive cache language
model (record context counts smoothed by a corpus background); the
``hf`` backend masks one token at a time under a pretrained masked
language model.
"""

from __future__ import annotations

import math
import re
from collections import Counter

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def label_text(label: str) -> str:
    return label.replace("_", " ")


class CachePerplexityScorer:
    """Cache-LM pseudo-perplexity: P(token | context) mixes the record's
    own token distribution with a corpus background model."""

    name = "offline-cache-lm"

    def __init__(self, corpus_texts: list[str], cache_weight: float = 0.7):
        if not 0 < cache_weight < 1:
            raise ValueError("cache_weight must be in (0, 1)")
        self.cache_weight = cache_weight
        self._background = Counter()
        for text in corpus_texts:
            self._background.update(_tokens(text))
        self._background_total = sum(self._background.values())
        self._vocabulary = max(len(self._background), 1)

    def _background_prob(self, token: str) -> float:
        return (self._background[token] + 1.0) / (self._background_total + self._vocabulary)

    def score(self, context_text: str, concept_label: str) -> float:
        """Pseudo-perplexity of the concept's label tokens given the
        context; finite and positive for any inputs."""
        tokens = _tokens(label_text(concept_label))
        if not tokens:
            raise ValueError(f"concept {concept_label!r} has no scoreable tokens")
        cache = Counter(_tokens(context_text))
        cache_total = sum(cache.values())
        log_likelihood = 0.0
        for token in tokens:
            cache_prob = cache[token] / cache_total if cache_total else 0.0
            prob = self.cache_weight * cache_prob + (1 - self.cache_weight) * self._background_prob(token)
            log_likelihood += math.log(prob)
        return math.exp(-log_likelihood / len(tokens))


class HfMaskedLMScorer:
    """Masked-token-averaging pseudo-perplexity over a local masked LM."""

    def __init__(self, model_path: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise RuntimeError(
                "the hf backend needs the optional [hf] dependencies installed"
            ) from exc
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        self.model = AutoModelForMaskedLM.from_pretrained(model_path).to(device).eval()
        self.device = device
        self.name = f"hf-masked-lm:{model_path}"

    def score(self, context_text: str, concept_label: str) -> float:  # pragma: no cover
        torch = self._torch
        text = f"{context_text} {label_text(concept_label)}"
        encoding = self.tokenizer(text, return_tensors="pt", truncation=True).to(self.device)
        input_ids = encoding["input_ids"][0]
        context_len = len(
            self.tokenizer(context_text, truncation=True)["input_ids"]
        )
        positions = range(max(context_len - 1, 1), len(input_ids) - 1)
        total = 0.0
        count = 0
        for position in positions:
            masked = input_ids.clone()
            true_id = int(masked[position])
            masked[position] = self.tokenizer.mask_token_id
            with torch.no_grad():
                logits = self.model(masked.unsqueeze(0)).logits[0, position]
            log_probs = torch.log_softmax(logits, dim=-1)
            total += -float(log_probs[true_id])
            count += 1
        return math.exp(total / max(count, 1))

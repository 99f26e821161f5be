"""Backbone contract plus prompt encoding.

Any backbone (the shipped toy, or an adapter around a real video UNet) must
provide the members of :class:`Denoiser`. Attention maps are returned per
``(site_id, kind)`` with heads already mean-aggregated.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import numpy as np
import torch

from .attention import AttentionSite
from .errors import BindingError, ContractError
from .scheduler import LatentState


@dataclass(frozen=True)
class PromptEncoding:
    tokens: tuple[str, ...]
    embeddings: torch.Tensor
    key_token_indices: tuple[int, ...]

    def __post_init__(self):
        for i in self.key_token_indices:
            if not 0 <= i < len(self.tokens):
                raise ContractError(f"key token index {i} out of range for {len(self.tokens)} tokens")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class DenoiserOutput:
    eps: torch.Tensor
    attention: dict[tuple[str, str], torch.Tensor]


class Denoiser(Protocol):
    sites: dict[str, AttentionSite]

    def encode_video(self, video: np.ndarray) -> LatentState: ...

    def decode_latent(self, z: LatentState) -> np.ndarray: ...

    def encode_prompt(self, text: Sequence[str], key_tokens: Sequence[str]) -> PromptEncoding: ...

    def predict_noise(self, z: LatentState, t: int, prompt: PromptEncoding) -> DenoiserOutput: ...

    def to_dict(self) -> dict[str, Any]: ...


def tokenize(text: str | Sequence[str]) -> list[str]:
    if isinstance(text, str):
        return text.lower().split()
    return [str(tok).lower() for tok in text]


def resolve_key_tokens(tokens: Sequence[str], key_tokens: Sequence[str]) -> tuple[int, ...]:
    """First-occurrence index of each key token."""
    out = []
    for key in key_tokens:
        try:
            out.append(list(tokens).index(key))
        except ValueError:
            raise BindingError(f"key token {key!r} does not occur in prompt {' '.join(tokens)!r}") from None
    return tuple(out)


def hashed_unit_vector(token: str, dim: int, seed: int) -> np.ndarray:
    """Seeded, platform-independent unit vector for a token."""
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def encode_prompt_hashed(text, key_tokens, dim: int, seed: int) -> PromptEncoding:
    tokens = tuple(tokenize(text))
    if not tokens:
        raise ContractError("prompt must contain at least one token")
    keys = resolve_key_tokens(tokens, tokenize(key_tokens))
    emb = np.stack([hashed_unit_vector(tok, dim, seed) for tok in tokens])
    return PromptEncoding(tokens=tokens, embeddings=torch.from_numpy(emb), key_token_indices=keys)

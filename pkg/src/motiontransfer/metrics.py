"""Video evaluation metrics over pluggable embedding providers.

``ToyEmbedder`` is a deterministic stand-in for an image/text encoder: it
only supports ranking sanity checks, its absolute values mean nothing.
"""
from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np

from .denoiser import tokenize
from .errors import ContractError
from .fixtures import Tracklet


class EmbeddingProvider(Protocol):
    def image_embed(self, frame: np.ndarray) -> np.ndarray: ...

    def text_embed(self, tokens: Sequence[str]) -> np.ndarray: ...


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        # degenerate input (e.g. a flat mid-gray frame): pick a fixed direction
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / n


class ToyEmbedder:
    """Seeded random projection of an area-downsampled frame; tokens hash into the same space."""

    def __init__(self, dim: int = 64, grid: int = 8, seed: int = 0):
        self.dim, self.grid, self.seed = dim, grid, seed
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((dim, grid * grid * 3)) / np.sqrt(grid * grid * 3)

    def _pool(self, frame: np.ndarray) -> np.ndarray:
        f = np.asarray(frame, dtype=np.float64)
        h, w, c = f.shape
        g = self.grid
        ys = np.linspace(0, h, g + 1).astype(int)
        xs = np.linspace(0, w, g + 1).astype(int)
        cells = [f[ys[i]:max(ys[i + 1], ys[i] + 1), xs[j]:max(xs[j + 1], xs[j] + 1)].mean(axis=(0, 1))
                 for i in range(g) for j in range(g)]
        return np.concatenate(cells)

    def image_embed(self, frame: np.ndarray) -> np.ndarray:
        return _unit(self._proj @ (self._pool(frame) - 0.5))

    def text_embed(self, tokens: Sequence[str]) -> np.ndarray:
        toks = tokenize(tokens)
        if not toks:
            raise ContractError("prompt must contain at least one token")
        acc = np.zeros(self.dim)
        for tok in toks:
            digest = hashlib.sha256(f"{self.seed}:{tok}".encode()).digest()
            acc += _unit(np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal(self.dim))
        return _unit(acc)


def _frames(video) -> np.ndarray:
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4:
        raise ContractError(f"video must be (F, H, W, C), got {v.shape}")
    return v


def temporal_consistency(video, emb: EmbeddingProvider) -> float:
    """Mean cosine similarity between embeddings of consecutive frames."""
    v = _frames(video)
    if v.shape[0] < 2:
        raise ContractError("temporal consistency needs at least two frames")
    e = np.stack([emb.image_embed(f) for f in v])
    return float(np.mean(np.sum(e[1:] * e[:-1], axis=1)))


def text_similarity(video, prompt, emb: EmbeddingProvider) -> float:
    """Mean cosine similarity between each frame's embedding and the prompt's."""
    v = _frames(video)
    if v.shape[0] < 1:
        raise ContractError("video has no frames")
    toks = tokenize(prompt)
    if not toks:
        raise ContractError("prompt must contain at least one token")
    t = emb.text_embed(toks)
    return float(np.mean([emb.image_embed(f) @ t for f in v]))


def displacement_correlation(a: Tracklet, b: Tracklet) -> float:
    """Cosine between the flattened displacement sequences of two tracklets.

    Two static tracklets correlate perfectly; a static and a moving one score 0.
    """
    da, db = a.displacements().ravel(), b.displacements().ravel()
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(da @ db / (na * nb), -1.0, 1.0))


def motion_fidelity(src: Sequence[Tracklet], gen: Sequence[Tracklet]) -> float:
    """Mean displacement correlation over greedily matched tracklet pairs.

    Pairs are taken in order of decreasing absolute correlation, each tracklet
    used at most once, and scored by their signed correlation. Matching on the
    magnitude pairs a tracklet with the one moving along the same path even
    when it runs the other way, so a fully reversed motion scores -1.
    """
    src, gen = list(src), list(gen)
    if not src or not gen:
        raise ContractError("motion fidelity needs at least one tracklet on each side")
    n = src[0].n_frames
    if any(t.n_frames != n for t in src + gen):
        raise ContractError("all tracklets must have the same frame count")
    sim = np.array([[displacement_correlation(a, b) for b in gen] for a in src])
    used_r, used_c, picked = set(), set(), []
    # stable order for ties: row-major index
    for idx in np.argsort(-np.abs(sim), axis=None, kind="stable"):
        i, j = divmod(int(idx), sim.shape[1])
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        picked.append(sim[i, j])
        if len(picked) == min(sim.shape):
            break
    return float(np.mean(picked))


def centroid_tracklets(video, threshold: float = 0.1) -> list[Tracklet]:
    """Track the foreground centroid per frame against the clip's median colour.

    A minimal stand-in for a point tracker on synthetic clips: one object on a
    flat background that covers most pixels. Frames with no foreground reuse
    the previous centroid.
    """
    v = _frames(video)
    bg = np.median(v.reshape(-1, v.shape[-1]), axis=0)
    fg = np.abs(v - bg).sum(axis=-1) > threshold
    _, h, w = fg.shape
    yy, xx = np.mgrid[0:h, 0:w]
    pts, last = [], (w / 2.0, h / 2.0)
    for m in fg:
        if m.any():
            last = (float(xx[m].mean() + 0.5), float(yy[m].mean() + 0.5))
        pts.append(last)
    return [Tracklet(np.array(pts))]

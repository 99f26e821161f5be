"""Attention maps: computation, per-step records, and the per-phase archive."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import torch

from . import mft
from .errors import ArchiveLookupError, ContractError

SITES = ("down_last", "mid", "up_first")
KINDS = ("cross", "self", "temporal")


def compute_attention(q, k):
    """Row-stochastic ``softmax(q @ k.T / sqrt(D))`` over the last axis.

    Accepts torch tensors (differentiable, any matching leading batch dims) or
    numpy arrays (returns numpy).
    """
    as_numpy = isinstance(q, np.ndarray)
    q_t = torch.as_tensor(q)
    k_t = torch.as_tensor(k)
    if q_t.ndim < 2 or k_t.ndim < 2:
        raise ContractError("attention inputs must be at least 2-D")
    d = q_t.shape[-1]
    if d < 1 or k_t.shape[-1] != d:
        raise ContractError(f"feature dims disagree: Q has {q_t.shape[-1]}, K has {k_t.shape[-1]}")
    logits = q_t @ k_t.transpose(-1, -2) / math.sqrt(d)
    logits = logits - logits.amax(dim=-1, keepdim=True).detach()
    w = torch.exp(logits)
    out = w / w.sum(dim=-1, keepdim=True)
    return out.numpy() if as_numpy else out


@dataclass(frozen=True)
class AttentionSite:
    site_id: str
    spatial_dims: tuple[int, int]

    @property
    def n_positions(self) -> int:
        return self.spatial_dims[0] * self.spatial_dims[1]

    @property
    def size_wh(self) -> tuple[int, int]:
        """Map size as width x height, the convention used for video resolutions."""
        return self.spatial_dims[1], self.spatial_dims[0]


@dataclass
class AttentionRecord:
    kind: str
    timestep: int
    site: AttentionSite
    map: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown attention kind {self.kind!r}")
        self.map = np.asarray(self.map, dtype=np.float32)
        n = self.site.n_positions
        shape = self.map.shape
        ok = {
            "cross": len(shape) == 3 and shape[1] == n,
            "self": len(shape) == 3 and shape[1] == n and shape[2] == n,
            "temporal": len(shape) == 3 and shape[0] == n and shape[1] == shape[2],
        }[self.kind]
        if not ok:
            raise ContractError(f"{self.kind} map shape {shape} inconsistent with site {self.site}")

    @property
    def key(self) -> tuple[int, str, str]:
        return (self.timestep, self.site.site_id, self.kind)


class AttentionArchive:
    """All attention records of one phase, keyed by ``(t, site_id, kind)``."""

    def __init__(self, phase: str = "inversion"):
        self.phase = phase
        self._records: dict[tuple[int, str, str], AttentionRecord] = {}

    def record(self, rec: AttentionRecord) -> "AttentionArchive":
        if rec.key in self._records:
            raise ContractError(f"duplicate attention record at {rec.key}")
        self._records[rec.key] = rec
        return self

    def get(self, t: int, site: str, kind: str) -> AttentionRecord:
        try:
            return self._records[(t, site, kind)]
        except KeyError:
            raise ArchiveLookupError(f"no {kind} record for site {site!r} at t={t} ({self.phase})") from None

    def __contains__(self, key) -> bool:
        return tuple(key) in self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[AttentionRecord]:
        return iter(self._records[k] for k in sorted(self._records))

    def keys(self) -> set[tuple[int, str, str]]:
        return set(self._records)

    def timesteps(self) -> list[int]:
        return sorted({k[0] for k in self._records}, reverse=True)

    def sites(self) -> dict[str, AttentionSite]:
        return {r.site.site_id: r.site for r in self._records.values()}

    def missing(self, timesteps: Iterable[int], sites: Iterable[str], kinds: Iterable[str] = KINDS):
        return [(t, s, k) for t in timesteps for s in sites for k in kinds if (t, s, k) not in self._records]

    def save(self, run_dir) -> list[Path]:
        root = Path(run_dir) / "attn" / self.phase
        return [mft.save(root / f"t{r.timestep:03}" / f"{r.site.site_id}_{r.kind}.mft", r.map) for r in self]

    @classmethod
    def load(cls, run_dir, phase: str, sites: dict[str, AttentionSite]) -> "AttentionArchive":
        """Read an archive back; ``sites`` (from the run manifest) restores spatial dims."""
        root = Path(run_dir) / "attn" / phase
        if not root.is_dir():
            raise ArchiveLookupError(f"no attention archive at {root}")
        arch = cls(phase)
        for path in sorted(root.glob("t*/*.mft")):
            site_id, kind = path.stem.rsplit("_", 1)
            if site_id not in sites:
                raise ArchiveLookupError(f"site {site_id!r} not declared in manifest")
            arch.record(AttentionRecord(kind, int(path.parent.name[1:]), sites[site_id], mft.load(path)))
        return arch


def token_map(archive: AttentionArchive, t: int, site: str, s: int) -> np.ndarray:
    """Cross-attention to token ``s`` as ``(frames, h_s, w_s)`` spatial maps."""
    rec = archive.get(t, site, "cross")
    if not 0 <= s < rec.map.shape[2]:
        raise ContractError(f"token index {s} out of range for {rec.map.shape[2]} tokens")
    h, w = rec.site.spatial_dims
    return rec.map[:, :, s].reshape(rec.map.shape[0], h, w)

"""Adaptive thresholding of per-token cross-attention into binary target masks."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import mft
from .attention import AttentionArchive, token_map
from .errors import ArchiveLookupError, ConfigurationError, ContractError, OrderingError

DEFAULT_TAU = 0.4


def check_tau(tau: float) -> float:
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    return float(tau)


def binarize(a, tau: float = DEFAULT_TAU) -> np.ndarray:
    """``1`` where a cell is strictly above ``tau`` times its map's maximum.

    The maximum is taken over the last two axes, so a stack of ``(..., h, w)``
    maps is thresholded map by map. All-zero maps give all-zero masks.
    """
    check_tau(tau)
    a = np.asarray(a)
    if a.ndim < 2:
        raise ContractError("binarize expects maps of at least two dimensions")
    if np.any(a < 0):
        raise ContractError("attention maps must be non-negative")
    peak = a.max(axis=(-2, -1), keepdims=True)
    return ((a > tau * peak) & (peak > 0)).astype(np.uint8)


@dataclass
class MaskSet:
    """Binary masks keyed by ``(t, site_id, s, f)``; stored as per-frame stacks."""

    tau: float
    token_binding: dict[int, int]
    stacks: dict[tuple[int, str, int], np.ndarray] = field(default_factory=dict, repr=False)

    def stack(self, t: int, site: str, s: int) -> np.ndarray:
        """All frames of one mask as ``(F, h_s, w_s)`` uint8."""
        try:
            return self.stacks[(t, site, s)]
        except KeyError:
            raise ArchiveLookupError(f"no mask for token {s} at site {site!r}, t={t}") from None

    def __getitem__(self, key: tuple[int, str, int, int]) -> np.ndarray:
        t, site, s, f = key
        return self.stack(t, site, s)[f]

    def keys(self) -> Iterator[tuple[int, str, int, int]]:
        for (t, site, s), m in sorted(self.stacks.items()):
            for f in range(m.shape[0]):
                yield (t, site, s, f)

    def __len__(self) -> int:
        return sum(m.shape[0] for m in self.stacks.values())

    @property
    def timesteps(self) -> list[int]:
        return sorted({k[0] for k in self.stacks}, reverse=True)

    @property
    def source_tokens(self) -> list[int]:
        return sorted({k[2] for k in self.stacks})

    def union(self, t: int, site: str) -> np.ndarray:
        """Per-frame union over key tokens, ``(F, h_s, w_s)``."""
        out = None
        for s in self.source_tokens:
            m = self.stack(t, site, s)
            out = m.copy() if out is None else np.maximum(out, m)
        if out is None:
            raise ArchiveLookupError("mask set is empty")
        return out

    def save(self, run_dir) -> list[Path]:
        root = Path(run_dir) / "masks"
        return [
            mft.save(root / f"t{t:03}" / f"{site}_s{s}_f{f}.mft", self[(t, site, s, f)])
            for (t, site, s, f) in self.keys()
        ]

    @classmethod
    def load(cls, run_dir, tau: float, token_binding: dict[int, int]) -> "MaskSet":
        root = Path(run_dir) / "masks"
        if not root.is_dir():
            raise ArchiveLookupError(f"no masks under {root}")
        frames: dict[tuple[int, str, int], dict[int, np.ndarray]] = {}
        for path in root.glob("t*/*.mft"):
            site, s, f = path.stem.rsplit("_", 2)
            key = (int(path.parent.name[1:]), site, int(s[1:]))
            frames.setdefault(key, {})[int(f[1:])] = mft.load(path)
        stacks = {k: np.stack([v[f] for f in sorted(v)]) for k, v in frames.items()}
        return cls(tau=tau, token_binding=dict(token_binding), stacks=stacks)


def build_mask_set(
    archive: AttentionArchive,
    key_tokens: Sequence[int],
    tau: float = DEFAULT_TAU,
    timesteps: Iterable[int] | None = None,
    sites: Iterable[str] | None = None,
    token_binding: dict[int, int] | None = None,
) -> MaskSet:
    """Threshold every ``(t, site, s, f)`` cross-attention map of an inversion archive.

    ``timesteps`` defaults to ``1..max(t)`` found in the archive; any gap is an
    ordering error because masks must exist for every generation step.
    """
    check_tau(tau)
    if not key_tokens:
        raise ConfigurationError("at least one key token is required")
    present = archive.timesteps()
    if not present:
        raise OrderingError("inversion archive is empty; run inversion before building masks")
    timesteps = list(timesteps) if timesteps is not None else list(range(max(present), 0, -1))
    sites = list(sites) if sites is not None else sorted(archive.sites())
    missing = archive.missing(timesteps, sites, kinds=("cross",))
    if missing:
        raise OrderingError(f"inversion archive incomplete: {len(missing)} missing cross records, e.g. {missing[0]}")
    binding = dict(token_binding) if token_binding is not None else {s: s for s in key_tokens}
    stacks = {}
    for t in timesteps:
        for site in sites:
            for s in key_tokens:
                stacks[(t, site, s)] = binarize(token_map(archive, t, site, s), tau)
    return MaskSet(tau=tau, token_binding=binding, stacks=stacks)

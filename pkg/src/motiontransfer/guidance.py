"""Attention losses, their weighted total, and the gradient latent update."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from .attention import AttentionArchive
from .errors import ConfigurationError, ContractError, NumericalError, OrderingError
from .masks import MaskSet, binarize, check_tau
from .scheduler import LatentState

EPS_DENOM = 1e-8


@dataclass(frozen=True)
class GuidanceConfig:
    tau: float = 0.4
    alpha: float = 5.0
    lambda_cross: float = 1.0
    lambda_self: float = 1.0
    lambda_temporal: float = 1.0
    guided_steps: int = 20
    iters_per_step: int = 20
    epsilon_denom: float = EPS_DENOM
    cfg_scale: float | None = None

    def __post_init__(self):
        check_tau(self.tau)
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        for name in ("lambda_cross", "lambda_self", "lambda_temporal"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.guided_steps < 0 or self.iters_per_step < 0:
            raise ConfigurationError("guided_steps and iters_per_step must be >= 0")
        if self.epsilon_denom <= 0:
            raise ConfigurationError("epsilon_denom must be positive")

    def validate_for(self, total_steps: int) -> "GuidanceConfig":
        if self.guided_steps > total_steps:
            raise ConfigurationError(f"guided_steps={self.guided_steps} exceeds {total_steps} sampler steps")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    cross: torch.Tensor | float
    self_: torch.Tensor | float
    temporal: torch.Tensor | float
    total: torch.Tensor | float

    def as_floats(self) -> dict[str, float]:
        return {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in (("cross", self.cross), ("self", self.self_),
                                         ("temporal", self.temporal), ("total", self.total))}


def _as_mask(m, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(np.asarray(m), dtype=like.dtype)


def _as_tensor(a) -> torch.Tensor:
    return a if isinstance(a, torch.Tensor) else torch.as_tensor(np.asarray(a, dtype=np.float64))


def cross_loss(a_gen, mask, eps: float = EPS_DENOM) -> torch.Tensor:
    """Mean over frames of ``1 - sum(M*A) / (sum(A) + eps)``; empty-mask frames count 0.

    ``a_gen`` and ``mask`` are ``(F, h, w)`` (or a single ``(h, w)`` frame).
    """
    a = _as_tensor(a_gen)
    m = _as_mask(mask, a)
    if a.shape != m.shape:
        raise ContractError(f"attention {tuple(a.shape)} and mask {tuple(m.shape)} differ")
    if a.ndim == 2:
        a, m = a[None], m[None]
    dims = tuple(range(1, a.ndim))
    inside = (m * a).sum(dims)
    per_frame = 1.0 - inside / (a.sum(dims) + eps)
    nonempty = (m.sum(dims) > 0).to(a.dtype)
    return (per_frame * nonempty).mean()


def self_loss(s_gen, mask, eps: float = EPS_DENOM) -> torch.Tensor:
    """Share of in-mask queries' self-attention that leaves the mask, mean over frames.

    ``s_gen`` is ``(F, N, N)``; ``mask`` is ``(F, N)`` or ``(F, h, w)``.
    """
    s = _as_tensor(s_gen)
    m = _as_mask(mask, s)
    if s.ndim != 3 or s.shape[1] != s.shape[2]:
        raise ContractError(f"self-attention maps must be (F, N, N), got {tuple(s.shape)}")
    m = m.reshape(m.shape[0], -1)
    if m.shape != s.shape[:2]:
        raise ContractError(f"mask {tuple(m.shape)} does not match self-attention {tuple(s.shape)}")
    from_mask = m[:, :, None] * s
    kept = (from_mask * m[:, None, :]).sum((1, 2))
    per_frame = 1.0 - kept / (from_mask.sum((1, 2)) + eps)
    nonempty = (m.sum(1) > 0).to(s.dtype)
    return (per_frame * nonempty).mean()


def temporal_loss(t_gen, t_src, mask) -> torch.Tensor:
    """Mean squared difference of ``(N, F, F)`` temporal maps over masked positions."""
    tg = _as_tensor(t_gen)
    ts = _as_tensor(t_src).to(tg.dtype)
    if tg.shape != ts.shape or tg.ndim != 3:
        raise ContractError(f"temporal maps differ: {tuple(tg.shape)} vs {tuple(ts.shape)}")
    m = _as_mask(mask, tg).reshape(-1)
    if m.shape[0] != tg.shape[0]:
        raise ContractError(f"mask has {m.shape[0]} positions, temporal maps {tg.shape[0]}")
    count = m.sum()
    if count == 0:
        return tg.sum() * 0.0
    sq = ((tg - ts) ** 2).mean((1, 2))
    return (sq * m).sum() / count


def total_loss(cross, self_, temporal, cfg: GuidanceConfig) -> LossBreakdown:
    total = cfg.lambda_cross * cross + cfg.lambda_self * self_ + cfg.lambda_temporal * temporal
    return LossBreakdown(cross=cross, self_=self_, temporal=temporal, total=total)


def guidance_losses(
    attention: Mapping[tuple[str, str], torch.Tensor],
    masks: MaskSet,
    src_archive: AttentionArchive,
    t: int,
    sites: Mapping,
    cfg: GuidanceConfig,
) -> LossBreakdown:
    """All three losses for one denoiser evaluation at sampler step ``t``.

    Averages run over frames, then bound key tokens, then sites. Self and
    temporal losses use the union of key-token masks.
    """
    eps = cfg.epsilon_denom
    binding = sorted(masks.token_binding.items())
    c_terms, s_terms, t_terms = [], [], []
    for site_id in sorted(sites):
        h, w = sites[site_id].spatial_dims
        cross = attention[(site_id, "cross")]
        f = cross.shape[0]
        per_tok = [cross_loss(cross[:, :, j].reshape(f, h, w), masks.stack(t, site_id, s), eps) for s, j in binding]
        c_terms.append(torch.stack(per_tok).mean())
        union = masks.union(t, site_id)
        s_terms.append(self_loss(attention[(site_id, "self")], union, eps))
        try:
            src = src_archive.get(t, site_id, "temporal").map
        except KeyError:
            raise OrderingError(f"no source temporal map for site {site_id!r} at t={t}") from None
        t_terms.append(temporal_loss(attention[(site_id, "temporal")], src, union.max(axis=0)))
    return total_loss(torch.stack(c_terms).mean(), torch.stack(s_terms).mean(), torch.stack(t_terms).mean(), cfg)


def latent_update(z: LatentState, grad, alpha: float) -> LatentState:
    """Plain gradient step ``z - alpha * grad``."""
    if tuple(grad.shape) != z.shape:
        raise ContractError(f"gradient shape {tuple(grad.shape)} does not match latent {z.shape}")
    finite = torch.isfinite(grad).all() if isinstance(grad, torch.Tensor) else np.isfinite(grad).all()
    if not bool(finite):
        bad = int((~torch.isfinite(_as_tensor(grad))).sum())
        raise NumericalError(f"non-finite gradient at t={z.timestep} ({bad} entries)")
    return LatentState(z.data - alpha * grad, z.timestep)


def attention_mask_iou(
    gen_archive: AttentionArchive,
    masks: MaskSet,
    timesteps: Sequence[int],
    binding: Mapping[int, int] | None = None,
    sites: Sequence[str] | None = None,
) -> float:
    """Mean IoU between thresholded generation-side cross-attention and source masks.

    Averages over timesteps, sites, bound tokens and frames. A frame where both
    masks are empty counts as full agreement.
    """
    binding = dict(masks.token_binding if binding is None else binding)
    sites = sorted(gen_archive.sites()) if sites is None else list(sites)
    scores = []
    for t in timesteps:
        for site_id in sites:
            rec = gen_archive.get(t, site_id, "cross")
            h, w = rec.site.spatial_dims
            for s, j in sorted(binding.items()):
                gen = binarize(rec.map[:, :, j].reshape(-1, h, w), masks.tau).astype(bool)
                src = masks.stack(t, site_id, s).astype(bool)
                inter = (gen & src).sum(axis=(1, 2))
                union = (gen | src).sum(axis=(1, 2))
                scores.extend(np.where(union > 0, inter / np.maximum(union, 1), 1.0))
    if not scores:
        raise ContractError("no timesteps/sites/tokens to score")
    return float(np.mean(scores))

"""Invert-then-generate orchestration over a denoiser and a noise schedule."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .attention import KINDS, AttentionArchive, AttentionRecord
from .denoiser import Denoiser, DenoiserOutput, PromptEncoding
from .errors import NumericalError, OrderingError
from .guidance import GuidanceConfig, guidance_losses, latent_update
from .masks import MaskSet
from .scheduler import LatentState, NoiseSchedule, ddim_invert_step, ddim_step

log = logging.getLogger(__name__)


@dataclass
class LatentTrajectory:
    states: list[LatentState]

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, t: int) -> LatentState:
        return self.states[t]

    @property
    def final(self) -> LatentState:
        return self.states[-1]


@dataclass
class StepSummary:
    t: int
    initial: dict[str, float]
    final: dict[str, float]


@dataclass
class GenerationResult:
    video: np.ndarray
    latent: LatentState
    archive: AttentionArchive
    loss_log: list[dict] = field(default_factory=list)
    steps: list[StepSummary] = field(default_factory=list)


def _record_all(archive: AttentionArchive, out: DenoiserOutput, t: int, denoiser: Denoiser) -> None:
    for site_id, site in denoiser.sites.items():
        for kind in KINDS:
            m = out.attention[(site_id, kind)].detach().numpy()
            archive.record(AttentionRecord(kind, t, site, m))


def _check_finite(x: torch.Tensor, what: str, t: int) -> None:
    if not bool(torch.isfinite(x).all()):
        raise NumericalError(f"non-finite {what} at step t={t}")


def _predict(denoiser, z, t, prompt, cfg_scale=None, null_prompt=None) -> DenoiserOutput:
    out = denoiser.predict_noise(z, t, prompt)
    if cfg_scale is not None and cfg_scale != 1.0:
        unc = denoiser.predict_noise(z, t, null_prompt)
        out = DenoiserOutput(eps=unc.eps + cfg_scale * (out.eps - unc.eps), attention=out.attention)
    return out


def invert(video: np.ndarray, prompt: PromptEncoding, sched: NoiseSchedule, denoiser: Denoiser):
    """DDIM-invert ``video`` to ``z_T`` recording attention at every step.

    The step ``t-1 -> t`` evaluates the denoiser at timestep ``t`` so the
    archive keys (``t = 1..T``) match those of generation.
    """
    z = denoiser.encode_video(video)
    states = [z]
    archive = AttentionArchive("inversion")
    with torch.no_grad():
        for t in range(1, sched.total_steps + 1):
            out = denoiser.predict_noise(z, t, prompt)
            _record_all(archive, out, t, denoiser)
            z = ddim_invert_step(z, out.eps, t - 1, t, sched)
            _check_finite(z.data, "latent", t)
            states.append(z)
    return LatentTrajectory(states), archive


def guided_timesteps(sched: NoiseSchedule, cfg: GuidanceConfig) -> list[int]:
    """The first ``guided_steps`` sampler steps, highest noise first."""
    return sched.timesteps[: cfg.guided_steps]


def generate(
    z_T: LatentState,
    masks: MaskSet | None,
    edit_prompt: PromptEncoding,
    src_archive: AttentionArchive | None,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
    denoiser: Denoiser,
    null_prompt: PromptEncoding | None = None,
) -> GenerationResult:
    """Backward DDIM from ``z_T`` with attention-guided latent updates on early steps."""
    cfg.validate_for(sched.total_steps)
    guided = guided_timesteps(sched, cfg) if cfg.iters_per_step > 0 else []
    if guided:
        if masks is None or src_archive is None:
            raise OrderingError("guided generation needs masks and the inversion archive; build masks first")
        for t in guided:
            for site_id in denoiser.sites:
                for s in masks.token_binding:
                    masks.stack(t, site_id, s)
                src_archive.get(t, site_id, "temporal")
    if cfg.cfg_scale is not None and cfg.cfg_scale != 1.0 and null_prompt is None:
        null_prompt = denoiser.encode_prompt([""], [])
    guided_set = set(guided)
    archive = AttentionArchive("generation")
    result = GenerationResult(video=None, latent=None, archive=archive)
    z = LatentState(z_T.data.detach().clone(), sched.total_steps)

    for t in sched.timesteps:
        if t in guided_set:
            initial = None
            for it in range(cfg.iters_per_step):
                zd = z.data.detach().requires_grad_(True)
                out = _predict(denoiser, LatentState(zd, t), t, edit_prompt, cfg.cfg_scale, null_prompt)
                losses = guidance_losses(out.attention, masks, src_archive, t, denoiser.sites, cfg)
                _check_finite(losses.total.detach(), "guidance loss", t)
                (grad,) = torch.autograd.grad(losses.total, zd)
                row = losses.as_floats()
                result.loss_log.append({"step": t, "iter": it, **row})
                initial = initial or row
                z = latent_update(LatentState(zd.detach(), t), grad, cfg.alpha)
            with torch.no_grad():
                out = _predict(denoiser, z, t, edit_prompt, cfg.cfg_scale, null_prompt)
                final = guidance_losses(out.attention, masks, src_archive, t, denoiser.sites, cfg).as_floats()
            result.steps.append(StepSummary(t, initial, final))
            log.debug("t=%d loss %.4f -> %.4f", t, initial["total"], final["total"])
        else:
            with torch.no_grad():
                out = _predict(denoiser, z, t, edit_prompt, cfg.cfg_scale, null_prompt)
        _record_all(archive, out, t, denoiser)
        with torch.no_grad():
            z = ddim_step(z, out.eps.detach(), t, t - 1, sched)
        _check_finite(z.data, "latent", t)

    result.latent = z
    result.video = denoiser.decode_latent(z)
    return result

"""Shared small-scale setups for tests."""
import numpy as np
import torch

from motiontransfer.fixtures import synth_fixture
from motiontransfer.guidance import GuidanceConfig, guidance_losses
from motiontransfer.masks import build_mask_set
from motiontransfer.pipeline import invert
from motiontransfer.scheduler import LatentState, make_schedule
from motiontransfer.toy import ToyDenoiser, ToyDenoiserSpec


def small_problem(seed: int):
    """A random small toy configuration with masks and a source archive.

    Returns ``(loss_fn, z0)`` where ``loss_fn`` maps a latent tensor to the
    total guidance loss at a randomly chosen sampler step.
    """
    rng = np.random.default_rng(seed)
    frames = int(rng.integers(2, 4))
    side = int(rng.choice([8, 16]))
    kind = ["moving-square", "bouncing-disc", "two-objects"][seed % 3]
    video, _ = synth_fixture(kind, seed=seed, frames=frames, height=side, width=side)
    spec = ToyDenoiserSpec.for_video(
        frames, side, side,
        codec_factor=2,
        blocks=("down", "mid", "up"),
        width=int(rng.choice([8, 16])),
        text_dim=8,
        seed=seed,
        cross_gain=float(rng.uniform(4, 16)),
        self_gain=float(rng.uniform(1, 4)),
    )
    sched = make_schedule(4)
    dn = ToyDenoiser(spec, sched)
    src = dn.encode_prompt("a red square moving left", "square moving")
    edit = dn.encode_prompt("a blue disc moving left", "disc moving")
    _, archive = invert(video, src, sched, dn)
    masks = build_mask_set(archive, src.key_token_indices, 0.4,
                           token_binding=dict(zip(src.key_token_indices, edit.key_token_indices)))
    t = int(rng.integers(1, 5))
    cfg = GuidanceConfig(lambda_cross=float(rng.uniform(0.5, 2)), lambda_self=float(rng.uniform(0.5, 2)),
                         lambda_temporal=float(rng.uniform(0.5, 2)) * 50)
    z0 = torch.from_numpy(rng.standard_normal(spec.latent_dims))

    def loss_fn(z):
        out = dn.predict_noise(LatentState(z, t), t, edit)
        return guidance_losses(out.attention, masks, archive, t, dn.sites, cfg).total

    return loss_fn, z0


def gradient_check(loss_fn, z0, h: float = 1e-5) -> float:
    """Relative max-norm error between autograd and central differences over every entry."""
    z = z0.clone().requires_grad_(True)
    (g,) = torch.autograd.grad(loss_fn(z), z)
    fd = torch.empty_like(z0)
    flat, out = z0.reshape(-1), fd.reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            e = torch.zeros_like(flat)
            e[i] = h
            plus = loss_fn((flat + e).reshape(z0.shape))
            minus = loss_fn((flat - e).reshape(z0.shape))
            out[i] = (plus - minus) / (2 * h)
    return float((fd - g).abs().max() / g.abs().max())

"""Deterministic toy text-to-video backbone with an analytic codec.

The network is a miniature video UNet: a pointwise stem, ``n`` down blocks
(each followed by 2x average pooling), one mid block and ``n`` up blocks
(nearest 2x upsampling plus skip). Every block runs spatial self-attention,
cross-attention to the prompt, temporal attention across frames and a
pointwise MLP, each single-headed. All weights come from ``seed``; nothing is
trained.

Noise prediction is the exact denoiser for a Gaussian data prior of scale
``data_scale`` plus a small network term::

    sigma_t^2 = a_t * data_scale^2 + (1 - a_t)
    eps = sqrt(1 - a_t) * z / sigma_t^2 + eps_scale * net(z / sigma_t, t, prompt)

Under the Gaussian part alone the DDIM flow is a pure rescaling, so inversion
maps a clip to a unit-scale latent that still carries its layout and the
network always reads content at a comparable scale. Keeping ``eps_scale``
small is what makes inversion of this backbone nearly exact.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .attention import AttentionSite, compute_attention
from .denoiser import DenoiserOutput, PromptEncoding, encode_prompt_hashed
from .errors import ContractError
from .scheduler import LatentState, NoiseSchedule

# Orthonormal columns of a 4x4 Hadamard matrix: RGB -> 4 latent channels.
_LIFT = np.array([[1, 1, 1], [1, -1, 1], [1, 1, -1], [1, -1, -1]], dtype=np.float64) / 2.0


@dataclass(frozen=True)
class ToyCodec:
    """Area-average ``factor`` x downsample followed by a fixed channel lift.

    Exact on videos that are constant over ``factor x factor`` blocks. The zero
    latent decodes to mid-gray (0.5).
    """

    factor: int = 8

    def encode(self, video: np.ndarray) -> np.ndarray:
        v = np.asarray(video, dtype=np.float64)
        if v.ndim != 4 or v.shape[-1] != 3 or v.shape[0] < 1:
            raise ContractError(f"video must be (F, H, W, 3) with F >= 1, got {v.shape}")
        f, h, w, c = v.shape
        k = self.factor
        if h % k or w % k:
            raise ContractError(f"frame size {h}x{w} not divisible by codec factor {k}")
        means = v.reshape(f, h // k, k, w // k, k, c).mean(axis=(2, 4))
        return (2.0 * (means - 0.5)) @ _LIFT.T

    def decode(self, latent: np.ndarray) -> np.ndarray:
        z = np.asarray(latent, dtype=np.float64)
        if z.ndim != 4 or z.shape[-1] != 4:
            raise ContractError(f"latent must be (f, h, w, 4), got {z.shape}")
        rgb = 0.5 + 0.5 * (z @ _LIFT)
        k = self.factor
        rgb = np.repeat(np.repeat(rgb, k, axis=1), k, axis=2)
        return np.clip(rgb, 0.0, 1.0)


@dataclass(frozen=True)
class ToyDenoiserSpec:
    latent_dims: tuple[int, int, int, int]
    blocks: tuple[str, ...] = ("down", "down", "mid", "up", "up")
    width: int = 16
    text_dim: int = 16
    stem_stride: int = 1
    codec_factor: int = 8
    seed: int = 0
    cross_gain: float = 24.0
    self_gain: float = 0.5
    temporal_gain: float = 2.0
    pe_scale: float = 0.5
    data_scale: float = 1.0
    eps_scale: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "latent_dims", tuple(int(x) for x in self.latent_dims))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        n_down = self.blocks.count("down")
        if self.blocks != ("down",) * n_down + ("mid",) + ("up",) * n_down or n_down < 1:
            raise ContractError(f"blocks must be n x down, one mid, n x up (n >= 1), got {self.blocks}")
        f, h, w, d = self.latent_dims
        if d != 4:
            raise ContractError("toy latents have 4 channels")
        if self.width > 32:
            raise ContractError("toy channel width is capped at 32")
        step = self.stem_stride * 2**n_down
        if f < 1 or h % step or w % step:
            raise ContractError(f"latent {h}x{w} must be divisible by {step} (stem stride x 2^downs)")

    @property
    def n_down(self) -> int:
        return self.blocks.count("down")

    def site_dims(self) -> dict[str, tuple[int, int]]:
        _, h, w, _ = self.latent_dims
        h0, w0 = h // self.stem_stride, w // self.stem_stride
        n = self.n_down
        last_down = (h0 >> (n - 1), w0 >> (n - 1))
        return {"down_last": last_down, "mid": (h0 >> n, w0 >> n), "up_first": last_down}

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["latent_dims"] = list(self.latent_dims)
        d["blocks"] = list(self.blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ToyDenoiserSpec":
        d = dict(d)
        d.pop("kind", None)
        d["latent_dims"] = tuple(d["latent_dims"])
        d["blocks"] = tuple(d["blocks"])
        return cls(**d)

    @classmethod
    def for_video(cls, frames: int, height: int, width: int, /, **kw) -> "ToyDenoiserSpec":
        k = kw.get("codec_factor", cls.codec_factor)
        if height % k or width % k:
            raise ContractError(f"video {height}x{width} not divisible by codec factor {k}")
        return cls(latent_dims=(frames, height // k, width // k, 4), **kw)


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int) -> torch.Tensor:
    """``(n_in, n_out)`` matrix with orthonormal columns, or rows when ``n_in < n_out``."""
    a = rng.standard_normal((n_in, n_out))
    if n_in >= n_out:
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
    else:
        q, r = np.linalg.qr(a.T)
        q = (q * np.sign(np.diag(r))).T
    return torch.from_numpy(np.ascontiguousarray(q))


def _sinusoid(pos: np.ndarray, dim: int) -> np.ndarray:
    freqs = np.exp(-math.log(100.0) * np.arange(dim // 2) / max(dim // 2, 1))
    ang = pos[:, None] * freqs[None, :] * math.pi
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _layer_norm(x: torch.Tensor) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:], eps=1e-5)


class _Block:
    def __init__(self, rng: np.random.Generator, c: int, c_text: int, spec: ToyDenoiserSpec):
        o = lambda a, b: _orthogonal(rng, a, b)
        self.spec = spec
        self.sq, self.sk, self.sv, self.so = o(c, c), o(c, c), o(c, c), o(c, c)
        self.cq, self.ck, self.cv, self.co = o(c, c), o(c_text, c), o(c_text, c), o(c, c)
        self.tq, self.tk, self.tv, self.to = o(c, c), o(c, c), o(c, c), o(c, c)
        self.w1, self.w2 = o(c, 2 * c), o(2 * c, c) * 0.5
        self.temb = o(c, c) * 0.1

    def __call__(self, h, ctx, temb, frame_pe):
        f, hh, ww, c = h.shape
        n = hh * ww
        s = self.spec
        h = (h + temb @ self.temb).reshape(f, n, c)

        x = _layer_norm(h)
        a_self = compute_attention(s.self_gain * (x @ self.sq), x @ self.sk)
        h = h + (a_self @ (x @ self.sv)) @ self.so

        # queries see each position's deviation from the frame mean, so token
        # preference is driven by local content and position rather than a
        # component shared by the whole frame
        x = _layer_norm(h - h.mean(dim=1, keepdim=True))
        a_cross = compute_attention(s.cross_gain * (x @ self.cq), (ctx @ self.ck).expand(f, -1, -1))
        h = h + (a_cross @ (ctx @ self.cv)) @ self.co

        x = _layer_norm(h).transpose(0, 1) + frame_pe
        a_temp = compute_attention(s.temporal_gain * (x @ self.tq), x @ self.tk)
        h = h + ((a_temp @ (x @ self.tv)) @ self.to).transpose(0, 1)

        h = h + F.gelu(_layer_norm(h) @ self.w1) @ self.w2
        maps = {"cross": a_cross, "self": a_self, "temporal": a_temp}
        return h.reshape(f, hh, ww, c), maps


class ToyDenoiser:
    """Seeded toy backbone implementing the :class:`~motiontransfer.denoiser.Denoiser` contract."""

    def __init__(self, spec: ToyDenoiserSpec, schedule: NoiseSchedule):
        self.spec = spec
        self.schedule = schedule
        self.codec = ToyCodec(spec.codec_factor)
        self.sites = {k: AttentionSite(k, v) for k, v in spec.site_dims().items()}
        rng = np.random.default_rng(spec.seed)
        f, h, w, d = spec.latent_dims
        c, s = spec.width, spec.stem_stride
        self.w_in = _orthogonal(rng, d * s * s, c)
        self.w_out = _orthogonal(rng, c, d * s * s)
        self.t_proj = _orthogonal(rng, c, c)
        n = spec.n_down
        self.down = [_Block(rng, c, spec.text_dim, spec) for _ in range(n)]
        self.mid = _Block(rng, c, spec.text_dim, spec)
        self.up = [_Block(rng, c, spec.text_dim, spec) for _ in range(n)]
        h0, w0 = h // s, w // s
        ys, xs = np.meshgrid(np.arange(h0) / h0, np.arange(w0) / w0, indexing="ij")
        pe = np.concatenate([_sinusoid(ys.ravel() * 2, c // 2), _sinusoid(xs.ravel() * 2, c // 2)], axis=1)
        self.pos_pe = torch.from_numpy(pe.reshape(h0, w0, c) * spec.pe_scale)
        self.frame_pe = torch.from_numpy(_sinusoid(np.arange(f, dtype=np.float64) / 2.0, c))

    # codec ---------------------------------------------------------------
    def encode_video(self, video: np.ndarray) -> LatentState:
        z = self.codec.encode(video)
        if z.shape != self.spec.latent_dims:
            raise ContractError(f"video encodes to latent {z.shape}, denoiser expects {self.spec.latent_dims}")
        return LatentState(torch.from_numpy(z), 0)

    def decode_latent(self, z: LatentState) -> np.ndarray:
        data = z.data.detach().numpy() if isinstance(z.data, torch.Tensor) else np.asarray(z.data)
        if data.shape != self.spec.latent_dims:
            raise ContractError(f"latent shape {data.shape} does not match {self.spec.latent_dims}")
        return self.codec.decode(data)

    def encode_prompt(self, text: Sequence[str] | str, key_tokens: Sequence[str] | str) -> PromptEncoding:
        return encode_prompt_hashed(text, key_tokens, self.spec.text_dim, self.spec.seed)

    # network -------------------------------------------------------------
    def _patchify(self, x):
        s = self.spec.stem_stride
        if s == 1:
            return x
        f, h, w, d = x.shape
        return x.reshape(f, h // s, s, w // s, s, d).permute(0, 1, 3, 2, 4, 5).reshape(f, h // s, w // s, s * s * d)

    def _unpatchify(self, x):
        s = self.spec.stem_stride
        if s == 1:
            return x
        f, h, w, _ = x.shape
        d = self.spec.latent_dims[3]
        return x.reshape(f, h, w, s, s, d).permute(0, 1, 3, 2, 4, 5).reshape(f, h * s, w * s, d)

    def _time_embedding(self, t: int) -> torch.Tensor:
        e = _sinusoid(np.array([t / self.schedule.total_steps]), self.spec.width)[0]
        return torch.from_numpy(e) @ self.t_proj

    def predict_noise(self, z: LatentState, t: int, prompt: PromptEncoding) -> DenoiserOutput:
        x = z.data
        if not isinstance(x, torch.Tensor):
            x = torch.as_tensor(np.asarray(x, dtype=np.float64))
        x = x.to(torch.float64)
        if tuple(x.shape) != self.spec.latent_dims:
            raise ContractError(f"latent shape {tuple(x.shape)} does not match {self.spec.latent_dims}")
        if not 0 <= t <= self.schedule.total_steps:
            raise ContractError(f"timestep {t} outside [0, {self.schedule.total_steps}]")
        if prompt.embeddings.shape[1] != self.spec.text_dim:
            raise ContractError("prompt embedding width does not match the denoiser")
        a = float(self.schedule.alpha_bar[t])
        var = a * self.spec.data_scale**2 + (1.0 - a)
        h = self._patchify(x / math.sqrt(var)) @ self.w_in + self.pos_pe
        ctx = prompt.embeddings.to(torch.float64)
        temb = self._time_embedding(t)
        fpe = self.frame_pe
        maps = {}
        skips = []
        for i, blk in enumerate(self.down):
            h, m = blk(h, ctx, temb, fpe)
            if i == len(self.down) - 1:
                maps["down_last"] = m
            skips.append(h)
            f_, hh, ww, c = h.shape
            h = h.reshape(f_, hh // 2, 2, ww // 2, 2, c).mean(dim=(2, 4))
        h, maps["mid"] = self.mid(h, ctx, temb, fpe)
        for j, blk in enumerate(self.up):
            h = h.repeat_interleave(2, dim=1).repeat_interleave(2, dim=2) + skips.pop()
            h, m = blk(h, ctx, temb, fpe)
            if j == 0:
                maps["up_first"] = m
        out = self._unpatchify(_layer_norm(h) @ self.w_out)
        eps = (math.sqrt(1.0 - a) / var) * x + self.spec.eps_scale * out
        attention = {(site, kind): maps[site][kind] for site in self.sites for kind in maps[site]}
        return DenoiserOutput(eps=eps, attention=attention)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "toy", **self.spec.to_dict()}

"""Deterministic DDIM (eta = 0) schedule, sampling step and inversion step.

Timesteps are sampler indices ``0..T``; ``alpha_bar[0] == 1`` is the clean
latent. The step functions only use ``+``, ``-`` and scalar ``*`` so they work
on numpy arrays and torch tensors alike (autograd passes straight through).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigurationError, ContractError, OrderingError

TRAIN_STEPS = 1000
BETA_START = 8.5e-4
BETA_END = 1.2e-2


def _linear_betas(n: int) -> np.ndarray:
    return np.linspace(BETA_START, BETA_END, n, dtype=np.float64)


def _scaled_linear_betas(n: int) -> np.ndarray:
    return np.linspace(math.sqrt(BETA_START), math.sqrt(BETA_END), n, dtype=np.float64) ** 2


PROFILES = {
    "linear-beta": _linear_betas,
    "scaled-linear-beta": _scaled_linear_betas,
}


@dataclass(frozen=True)
class NoiseSchedule:
    total_steps: int
    alpha_bar: np.ndarray = field(repr=False)
    profile: str = "linear-beta"

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.total_steps + 1,):
            raise ContractError(f"alpha_bar must have length {self.total_steps + 1}, got {ab.shape}")
        if ab[0] != 1.0:
            raise ContractError("alpha_bar[0] must equal 1")
        if np.any(ab[1:] <= 0) or np.any(np.diff(ab) > 0):
            raise ContractError("alpha_bar must be positive and non-increasing")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def timesteps(self) -> list[int]:
        """Sampler indices visited by generation, highest noise first."""
        return list(range(self.total_steps, 0, -1))

    def to_dict(self) -> dict[str, Any]:
        return {
            "profile": self.profile,
            "total_steps": self.total_steps,
            # float.hex keeps the replay bit-exact through JSON
            "alpha_bar": [float(a).hex() for a in self.alpha_bar],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NoiseSchedule":
        ab = np.array([float.fromhex(a) if isinstance(a, str) else float(a) for a in d["alpha_bar"]])
        return cls(total_steps=int(d["total_steps"]), alpha_bar=ab, profile=d.get("profile", "custom"))


def make_schedule(total_steps: int = 50, profile: str = "linear-beta") -> NoiseSchedule:
    """Build a schedule by subsampling a 1000-step training ramp uniformly.

    Sampler step ``t`` maps to training step ``round(t * 1000 / total_steps)``.
    """
    if int(total_steps) != total_steps or total_steps < 1:
        raise ConfigurationError(f"total_steps must be a positive integer, got {total_steps!r}")
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown schedule profile {profile!r}; known: {sorted(PROFILES)}")
    total_steps = int(total_steps)
    betas = PROFILES[profile](TRAIN_STEPS)
    cum = np.cumprod(1.0 - betas)
    t = np.arange(1, total_steps + 1)
    train_idx = (t * TRAIN_STEPS + total_steps // 2) // total_steps
    alpha_bar = np.concatenate([[1.0], cum[train_idx - 1]])
    return NoiseSchedule(total_steps=total_steps, alpha_bar=alpha_bar, profile=profile)


@dataclass
class LatentState:
    """Latent video ``(frames, height, width, channels)`` at a sampler timestep."""

    data: Any
    timestep: int

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)


def _check(z: LatentState, eps, sched: NoiseSchedule, *ts: int) -> None:
    if tuple(eps.shape) != z.shape:
        raise ContractError(f"eps shape {tuple(eps.shape)} does not match latent shape {z.shape}")
    for t in ts:
        if not 0 <= t <= sched.total_steps:
            raise OrderingError(f"timestep {t} outside [0, {sched.total_steps}]")


def ddim_step(z: LatentState, eps, t: int, t_prev: int, sched: NoiseSchedule) -> LatentState:
    """One deterministic denoising step from ``t`` down to ``t_prev``."""
    if t <= t_prev:
        raise OrderingError(f"ddim_step needs t > t_prev, got t={t}, t_prev={t_prev}")
    _check(z, eps, sched, t, t_prev)
    a_t, a_p = float(sched.alpha_bar[t]), float(sched.alpha_bar[t_prev])
    x0 = (z.data - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
    return LatentState(math.sqrt(a_p) * x0 + math.sqrt(1.0 - a_p) * eps, t_prev)


def ddim_invert_step(z: LatentState, eps, t: int, t_next: int, sched: NoiseSchedule) -> LatentState:
    """Inverse of :func:`ddim_step` under a frozen ``eps``: moves ``t`` up to ``t_next``."""
    if t_next <= t:
        raise OrderingError(f"ddim_invert_step needs t_next > t, got t={t}, t_next={t_next}")
    _check(z, eps, sched, t, t_next)
    a_t, a_n = float(sched.alpha_bar[t]), float(sched.alpha_bar[t_next])
    x0 = (z.data - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
    return LatentState(math.sqrt(a_n) * x0 + math.sqrt(1.0 - a_n) * eps, t_next)

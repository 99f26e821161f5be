"""Synthetic clips with exact ground-truth object trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError

FIXTURES = ("moving-square", "bouncing-disc", "two-objects")


@dataclass(frozen=True)
class Tracklet:
    """Per-frame object centre ``(x, y)`` in pixels, shape ``(F, 2)``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ContractError(f"tracklet points must be (F, 2), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def n_frames(self) -> int:
        return self.points.shape[0]

    def displacements(self) -> np.ndarray:
        return np.diff(self.points, axis=0)

    def within(self, height: int, width: int) -> bool:
        x, y = self.points[:, 0], self.points[:, 1]
        return bool(np.all((x >= 0) & (x <= width) & (y >= 0) & (y <= height)))


def _colors(rng: np.random.Generator, n: int) -> list[np.ndarray]:
    # 8-bit representable so PNG round trips are exact; well separated from each other
    out = []
    while len(out) < n:
        c = rng.integers(0, 256, size=3)
        if all(np.abs(c - o).sum() >= 180 for o in out):
            out.append(c)
    return [c / 255.0 for c in out]


def _moving_square(rng, frames, height, width, size, speed):
    bg, fg = _colors(rng, 2)
    dirs = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]
    dx, dy = dirs[rng.integers(len(dirs))]
    travel = speed * (frames - 1)
    if size + travel > min(height, width):
        raise ConfigurationError(f"square of size {size} moving {travel}px does not fit in {height}x{width}")

    def start(d, extent):
        lo = travel if d < 0 else 0
        hi = extent - size - (travel if d > 0 else 0)
        return 2 * int(rng.integers(lo // 2, hi // 2 + 1))

    x0, y0 = start(dx, width), start(dy, height)
    video = np.broadcast_to(bg, (frames, height, width, 3)).copy()
    pts = []
    for f in range(frames):
        x, y = x0 + dx * speed * f, y0 + dy * speed * f
        video[f, y : y + size, x : x + size] = fg
        pts.append((x + size / 2.0, y + size / 2.0))
    return video, [Tracklet(np.array(pts))]


def _disc(video_f, cx, cy, r, color):
    h, w, _ = video_f.shape
    yy, xx = np.mgrid[0:h, 0:w]
    video_f[(xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r] = color


def _bounce(p, v, lo, hi):
    p = p + v
    if p < lo:
        p, v = 2 * lo - p, -v
    elif p > hi:
        p, v = 2 * hi - p, -v
    return p, v


def _bouncing_disc(rng, frames, height, width, size, speed):
    bg, fg = _colors(rng, 2)
    r = size / 2.0
    cx, cy = rng.uniform(r, width - r), rng.uniform(r, height - r)
    ang = rng.uniform(0, 2 * np.pi)
    vx, vy = speed * np.cos(ang), speed * np.sin(ang)
    video = np.broadcast_to(bg, (frames, height, width, 3)).copy()
    pts = []
    for f in range(frames):
        _disc(video[f], cx, cy, r, fg)
        pts.append((cx, cy))
        cx, vx = _bounce(cx, vx, r, width - r)
        cy, vy = _bounce(cy, vy, r, height - r)
    return video, [Tracklet(np.array(pts))]


def _two_objects(rng, frames, height, width, size, speed):
    # top-half square and bottom-half disc: disjoint lanes, so never overlapping
    bg, c1, c2 = _colors(rng, 3)
    half = height // 2
    if size > half:
        raise ConfigurationError("objects do not fit in separate half-frame lanes")
    video = np.broadcast_to(bg, (frames, height, width, 3)).copy()
    x1, v1 = rng.uniform(0, width - size), speed * rng.choice([-1, 1])
    x2, v2 = rng.uniform(size / 2, width - size / 2), speed * rng.choice([-1, 1])
    y1 = int(rng.integers(0, half - size + 1))
    y2 = half + rng.uniform(size / 2, half - size / 2)
    a, b = [], []
    for f in range(frames):
        xi = int(round(x1))
        video[f, y1 : y1 + size, xi : xi + size] = c1
        _disc(video[f], x2, y2, size / 2.0, c2)
        a.append((xi + size / 2.0, y1 + size / 2.0))
        b.append((x2, y2))
        x1, v1 = _bounce(x1, v1, 0, width - size)
        x2, v2 = _bounce(x2, v2, size / 2, width - size / 2)
    return video, [Tracklet(np.array(a)), Tracklet(np.array(b))]


_GENERATORS = {"moving-square": _moving_square, "bouncing-disc": _bouncing_disc, "two-objects": _two_objects}


def synth_fixture(kind: str, seed: int = 0, frames: int = 8, height: int = 32, width: int = 32,
                  size: int | None = None, speed: int = 2):
    """Return ``(video, tracklets)``; ``video`` is ``(F, H, W, 3)`` float64 in [0, 1].

    ``moving-square`` keeps the square on even pixel offsets so it is constant on
    2x2 blocks; it moves ``speed`` px per frame along each moving axis.
    """
    if kind not in _GENERATORS:
        raise ConfigurationError(f"unknown fixture {kind!r}; known: {', '.join(FIXTURES)}")
    if frames < 1:
        raise ConfigurationError("frames must be >= 1")
    size = size if size is not None else max(2, min(height, width) // 4)
    rng = np.random.default_rng(seed)
    return _GENERATORS[kind](rng, frames, height, width, size, speed)

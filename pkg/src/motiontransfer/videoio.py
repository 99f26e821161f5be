"""Video and tracklet files: numbered PNG frame directories or MFT tensors."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from . import mft
from .errors import ArchiveLookupError, ContractError
from .fixtures import Tracklet


def load_video(path) -> np.ndarray:
    """``(F, H, W, 3)`` float64 in [0, 1] from a PNG directory or an ``.mft`` file."""
    path = Path(path)
    if path.is_dir():
        frames = sorted(p for p in path.glob("*.png"))
        if not frames:
            raise ArchiveLookupError(f"no PNG frames in {path}")
        arr = np.stack([np.asarray(Image.open(p).convert("RGB"), dtype=np.float64) / 255.0 for p in frames])
        return arr
    if path.suffix == ".mft" and path.is_file():
        arr = mft.load(path)
        if arr.dtype == np.uint8:
            return arr.astype(np.float64) / 255.0
        return arr.astype(np.float64)
    raise ArchiveLookupError(f"video not found (expected a PNG directory or .mft file): {path}")


def save_png_frames(video, out_dir, pattern: str = "frame_{f:03}.png") -> list[Path]:
    v = np.asarray(video)
    if v.ndim != 4 or v.shape[-1] != 3:
        raise ContractError(f"video must be (F, H, W, 3), got {v.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for f, frame in enumerate(v):
        p = out_dir / pattern.format(f=f)
        Image.fromarray(np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8)).save(p)
        paths.append(p)
    return paths


def save_tracklets(path, tracklets) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"tracklets": [t.points.tolist() for t in tracklets]}, indent=1) + "\n")
    return path


def load_tracklets(path) -> list[Tracklet]:
    data = json.loads(Path(path).read_text())
    return [Tracklet(np.array(p)) for p in data["tracklets"]]

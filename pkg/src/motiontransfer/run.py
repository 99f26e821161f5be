"""Run manifests, run-directory persistence, and the end-to-end ``transfer``."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import torch

from . import mft
from .attention import AttentionArchive
from .denoiser import tokenize
from .errors import ConfigurationError, ContractError, MotionTransferError, OrderingError, PhaseError
from .guidance import GuidanceConfig
from .masks import MaskSet, build_mask_set
from .pipeline import GenerationResult, LatentTrajectory, generate, invert
from .scheduler import LatentState, NoiseSchedule, make_schedule
from .toy import ToyDenoiser, ToyDenoiserSpec
from .videoio import load_video, save_png_frames

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LOSS_COLUMNS = ("step", "iter", "cross", "self", "temporal", "total")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def positional_binding(source_keys, edit_keys) -> list[tuple[str, str]]:
    if len(source_keys) != len(edit_keys):
        raise ConfigurationError(
            f"{len(source_keys)} source key tokens vs {len(edit_keys)} edit key tokens: "
            "give an explicit token binding"
        )
    return list(zip(source_keys, edit_keys))


@dataclass
class RunManifest:
    """Everything needed to replay a transfer bit-exactly.

    ``token_binding`` pairs source key tokens with edit key tokens by word.
    ``artifacts`` maps run-relative paths to SHA-256 digests after a run.
    """

    source_video: str
    source_prompt: str
    source_key_tokens: list[str]
    edit_prompt: str
    edit_key_tokens: list[str]
    token_binding: list[tuple[str, str]] | None = None
    guidance: dict[str, Any] = field(default_factory=lambda: GuidanceConfig().to_dict())
    schedule: dict[str, Any] = field(default_factory=lambda: make_schedule(50).to_dict())
    denoiser: dict[str, Any] | None = None
    seed: int = 0
    fresh_noise: bool = False
    source_sha256: str | None = None
    format_version: int = FORMAT_VERSION
    artifacts: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.source_key_tokens = tokenize(self.source_key_tokens)
        self.edit_key_tokens = tokenize(self.edit_key_tokens)
        if self.token_binding is None:
            self.token_binding = positional_binding(self.source_key_tokens, self.edit_key_tokens)
        self.token_binding = [tuple(p) for p in self.token_binding]
        for src, dst in self.token_binding:
            if src not in self.source_key_tokens or dst not in self.edit_key_tokens:
                raise ConfigurationError(f"binding {src}:{dst} must pair a source key token with an edit key token")
        if self.format_version != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported manifest format version {self.format_version}")

    def guidance_config(self) -> GuidanceConfig:
        return GuidanceConfig(**self.guidance)

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule.from_dict(self.schedule)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["token_binding"] = [list(p) for p in self.token_binding]
        return d

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown manifest fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ContractError(f"manifest not found: {path}") from None

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def build_denoiser(manifest: RunManifest, video_shape: tuple[int, ...], sched: NoiseSchedule) -> ToyDenoiser:
    spec_d = manifest.denoiser
    if spec_d is None:
        f, h, w, _ = video_shape
        spec = ToyDenoiserSpec.for_video(f, h, w, codec_factor=2)
        manifest.denoiser = {"kind": "toy", **spec.to_dict()}
    else:
        kind = spec_d.get("kind", "toy")
        if kind != "toy":
            raise ConfigurationError(f"no adapter registered for denoiser kind {kind!r}")
        spec = ToyDenoiserSpec.from_dict(spec_d)
    return ToyDenoiser(spec, sched)


class TransferRun:
    """One invert-then-generate run with enforced phase order."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self.sched = manifest.noise_schedule()
        self.cfg = manifest.guidance_config().validate_for(self.sched.total_steps)
        self.video = load_video(manifest.source_video)
        digest = hashlib.sha256(mft.dumps(self.video)).hexdigest()
        if manifest.source_sha256 is None:
            manifest.source_sha256 = digest
        elif manifest.source_sha256 != digest:
            raise ContractError("source video content does not match the manifest hash")
        self.denoiser = build_denoiser(manifest, self.video.shape, self.sched)
        self.source_prompt = self.denoiser.encode_prompt(manifest.source_prompt, manifest.source_key_tokens)
        self.edit_prompt = self.denoiser.encode_prompt(manifest.edit_prompt, manifest.edit_key_tokens)
        src_pos = dict(zip(manifest.source_key_tokens, self.source_prompt.key_token_indices))
        dst_pos = dict(zip(manifest.edit_key_tokens, self.edit_prompt.key_token_indices))
        self.binding = {src_pos[a]: dst_pos[b] for a, b in manifest.token_binding}
        self.trajectory: LatentTrajectory | None = None
        self.inversion: AttentionArchive | None = None
        self.masks: MaskSet | None = None
        self.result: GenerationResult | None = None

    def _phase(self, name, fn, *args):
        try:
            return fn(*args)
        except MotionTransferError as exc:
            raise PhaseError(name, exc) from exc

    def invert(self) -> LatentTrajectory:
        self.trajectory, self.inversion = self._phase(
            "invert", invert, self.video, self.source_prompt, self.sched, self.denoiser)
        return self.trajectory

    def build_masks(self) -> MaskSet:
        if self.inversion is None:
            raise PhaseError("masks", OrderingError("masks requested before inversion"))
        self.masks = self._phase(
            "masks", build_mask_set, self.inversion, sorted(self.binding), self.cfg.tau,
            self.sched.timesteps, sorted(self.denoiser.sites), self.binding)
        return self.masks

    def initial_latent(self) -> LatentState:
        if self.manifest.fresh_noise:
            g = torch.Generator().manual_seed(self.manifest.seed)
            data = torch.randn(self.denoiser.spec.latent_dims, generator=g, dtype=torch.float64)
            return LatentState(data, self.sched.total_steps)
        return self.trajectory.final

    def generate(self) -> GenerationResult:
        if self.cfg.guided_steps > 0 and self.cfg.iters_per_step > 0 and self.masks is None:
            raise PhaseError("generate", OrderingError("generation requested before mask extraction"))
        if self.trajectory is None:
            raise PhaseError("generate", OrderingError("generation requested before inversion"))
        self.result = self._phase(
            "generate", generate, self.initial_latent(), self.masks, self.edit_prompt, self.inversion,
            self.cfg, self.sched, self.denoiser)
        return self.result

    # persistence ---------------------------------------------------------
    def save(self, run_dir) -> RunManifest:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        written: list[Path] = []
        if self.trajectory is not None:
            for t, z in enumerate(self.trajectory.states):
                written.append(mft.save(run_dir / "trajectory" / f"z{t:03}.mft", z.data.detach().numpy()))
            written += self.inversion.save(run_dir)
        if self.masks is not None:
            written += self.masks.save(run_dir)
        if self.result is not None:
            written += self.result.archive.save(run_dir)
            written.append(write_loss_csv(run_dir / "logs" / "guidance.csv", self.result.loss_log))
            written.append(write_step_csv(run_dir / "logs" / "steps.csv", self.result))
            written += save_png_frames(self.result.video, run_dir / "output")
            written.append(mft.save(run_dir / "output" / "video.mft", self.result.video))
        self.manifest.artifacts = {p.relative_to(run_dir).as_posix(): sha256_file(p) for p in sorted(written)}
        self.manifest.save(run_dir / "manifest.json")
        return self.manifest


def write_loss_csv(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for r in rows:
            w.writerow([r["step"], r["iter"]] + [repr(float(r[k])) for k in LOSS_COLUMNS[2:]])
    return path


def write_step_csv(path, result: GenerationResult) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "initial_total", "final_total"))
        for s in result.steps:
            w.writerow((s.t, repr(s.initial["total"]), repr(s.final["total"])))
    return path


def transfer(manifest: RunManifest, run_dir) -> TransferRun:
    """Invert, extract masks, generate, and persist everything under ``run_dir``."""
    run = TransferRun(manifest)
    run.invert()
    run.build_masks()
    run.generate()
    run.save(run_dir)
    return run

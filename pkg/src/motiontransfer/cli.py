"""``motiontransfer`` command line: synth, invert, transfer, metrics, inspect.

Exit codes: 0 success, 2 usage, 3 input or contract error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import mft
from .attention import KINDS, SITES, AttentionArchive, AttentionSite
from .denoiser import resolve_key_tokens, tokenize
from .errors import ArchiveLookupError, ConfigurationError, MotionTransferError
from .fixtures import FIXTURES, synth_fixture
from .guidance import GuidanceConfig
from .masks import MaskSet
from .metrics import ToyEmbedder, centroid_tracklets, motion_fidelity, temporal_consistency, text_similarity
from .run import RunManifest, TransferRun, canonical_json, positional_binding, transfer
from .scheduler import make_schedule
from .toy import ToyDenoiserSpec
from .videoio import load_tracklets, load_video, save_png_frames, save_tracklets

log = logging.getLogger("motiontransfer")

RUN_ROOT_ENV = "MOTIONFLOW_RUN_ROOT"

# Options that may also come from --config; flags win over the file, the file
# wins over these defaults.
DEFAULTS = {
    "source": None,
    "source_prompt": None,
    "key_tokens": None,
    "edit_prompt": None,
    "edit_key_tokens": None,
    "bind": None,
    "tau": 0.4,
    "alpha": 5.0,
    "lambda_cross": 1.0,
    "lambda_self": 1.0,
    "lambda_temporal": 1.0,
    "guided_steps": 20,
    "total_steps": 50,
    "iters": 20,
    "cfg_scale": None,
    "schedule": "linear-beta",
    "codec_factor": 2,
    "seed": 0,
    "fresh_noise": False,
    "out": None,
}


class UsageError(Exception):
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv_words(text: str) -> list[str]:
    return [w for w in (p.strip() for p in text.split(",")) if w]


def _add_run_options(p: argparse.ArgumentParser, edit: bool) -> None:
    g = p.add_argument_group("source")
    g.add_argument("--source", help="PNG frame directory or .mft video")
    g.add_argument("--source-prompt", help="prompt describing the source video")
    g.add_argument("--key-tokens", type=_csv_words, help="comma-separated source key words, e.g. bear,walking")
    g.add_argument("--config", help="JSON file of option values; explicit flags take precedence")
    g.add_argument("--out", help=f"run directory (default: ${RUN_ROOT_ENV}/<manifest hash> or ./runs/...)")
    g.add_argument("--seed", type=int, help="seed for model weights and fresh noise (default: 0)")
    g.add_argument("--total-steps", type=int, help="DDIM sampler steps T (default: 50)")
    g.add_argument("--schedule", help="noise schedule profile (default: linear-beta)")
    g.add_argument("--codec-factor", type=int, help="toy codec downsampling factor (default: 2)")
    if not edit:
        return
    g = p.add_argument_group("edit")
    g.add_argument("--edit-prompt", help="prompt for the generated video")
    g.add_argument("--edit-key-tokens", type=_csv_words, help="comma-separated edit key words, e.g. tiger,walking")
    g.add_argument("--bind", action="append", metavar="SRC:EDIT",
                   help="pair a source key word with an edit key word (repeatable; default: positional)")
    g = p.add_argument_group("guidance")
    g.add_argument("--tau", type=float, help="mask threshold fraction of the map maximum, in (0, 1) (default: 0.4)")
    g.add_argument("--alpha", type=float, help="latent update step size (default: 5.0)")
    g.add_argument("--lambda-cross", type=float, help="cross-attention loss weight (default: 1.0)")
    g.add_argument("--lambda-self", type=float, help="self-attention loss weight (default: 1.0)")
    g.add_argument("--lambda-temporal", type=float, help="temporal-attention loss weight (default: 1.0)")
    g.add_argument("--guided-steps", type=int, help="number of guided sampler steps, highest noise first (default: 20)")
    g.add_argument("--iters", type=int, help="latent updates per guided step (default: 20)")
    g.add_argument("--cfg-scale", type=float, help="classifier-free guidance scale (default: off)")
    g.add_argument("--fresh-noise", action="store_true", default=None,
                   help="start generation from seeded Gaussian noise instead of the inverted latent")
    g.add_argument("--manifest", help="replay an existing manifest.json (other options are ignored)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="motiontransfer", description="Attention-guided motion transfer on latent video diffusion.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic fixture clip and its ground-truth tracklets")
    s.add_argument("kind", choices=FIXTURES)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--height", type=int, default=32)
    s.add_argument("--width", type=int, default=32)

    inv = sub.add_parser("invert", help="invert a video and extract attention masks")
    _add_run_options(inv, edit=False)
    inv.add_argument("--tau", type=float, help="mask threshold fraction, in (0, 1) (default: 0.4)")

    tr = sub.add_parser("transfer", help="invert, extract masks and generate with attention guidance")
    _add_run_options(tr, edit=True)

    m = sub.add_parser("metrics", help="score a run directory or a pair of videos")
    m.add_argument("run_dir", nargs="?", help="run directory written by transfer")
    m.add_argument("--video", help="generated video (PNG directory or .mft) when no run directory is given")
    m.add_argument("--source", help="source video to compare against")
    m.add_argument("--prompt", help="prompt for text similarity (default: the run's edit prompt)")
    m.add_argument("--source-tracklets", help="tracklet JSON for the source (default: centroid tracker)")
    m.add_argument("--out", help="metrics.json path (default: <run_dir>/metrics.json)")
    m.add_argument("--scatter", help="append a text_similarity,motion_fidelity row to this CSV")

    i = sub.add_parser("inspect", help="dump masks, attention heatmaps or the loss log")
    i.add_argument("run_dir")
    i.add_argument("what", choices=("masks", "attn", "loss"))
    i.add_argument("--t", type=int, action="append", help="timestep to dump (repeatable; default: all)")
    i.add_argument("--site", choices=SITES, action="append", help="site to dump (repeatable; default: all)")
    i.add_argument("--phase", choices=("inversion", "generation"), default="inversion")
    i.add_argument("--out", help="output directory (default: <run_dir>/inspect/<what>)")
    return p


def _merged(args: argparse.Namespace) -> dict:
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {', '.join(sorted(unknown))}")
    out = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else file_cfg.get(key, default)
    for key in ("key_tokens", "edit_key_tokens"):
        if isinstance(out[key], str):
            out[key] = _csv_words(out[key])
    return out


def _parse_binding(pairs) -> list[tuple[str, str]] | None:
    if not pairs:
        return None
    out = []
    for p in pairs:
        src, sep, dst = p.partition(":")
        if not sep or not src or not dst:
            raise UsageError(f"argument --bind: expected SRC:EDIT, got {p!r}")
        out.append((src.strip().lower(), dst.strip().lower()))
    return out


def manifest_from_args(args: argparse.Namespace, edit: bool = True) -> RunManifest:
    """Validated manifest from parsed flags merged over ``--config``; usage errors exit 2."""
    c = _merged(args)
    for key in ("source", "source_prompt", "key_tokens") + (("edit_prompt", "edit_key_tokens") if edit else ()):
        if not c[key]:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    if not edit:
        c["edit_prompt"], c["edit_key_tokens"], c["guided_steps"] = c["source_prompt"], c["key_tokens"], 0
    try:
        cfg = GuidanceConfig(tau=c["tau"], alpha=c["alpha"], lambda_cross=c["lambda_cross"],
                             lambda_self=c["lambda_self"], lambda_temporal=c["lambda_temporal"],
                             guided_steps=c["guided_steps"], iters_per_step=c["iters"], cfg_scale=c["cfg_scale"])
        if c["total_steps"] < 1:
            raise ConfigurationError(f"total-steps must be >= 1, got {c['total_steps']}")
        cfg.validate_for(c["total_steps"])
        sched = make_schedule(c["total_steps"], c["schedule"])
        binding = _parse_binding(c["bind"])
        if binding is None:
            binding = positional_binding(tokenize(c["key_tokens"]), tokenize(c["edit_key_tokens"]))
        video = load_video(c["source"])
        spec = ToyDenoiserSpec.for_video(*video.shape[:3], codec_factor=c["codec_factor"], seed=c["seed"])
        return RunManifest(
            source_video=str(Path(c["source"]).resolve()),
            source_prompt=c["source_prompt"],
            source_key_tokens=c["key_tokens"],
            edit_prompt=c["edit_prompt"],
            edit_key_tokens=c["edit_key_tokens"],
            token_binding=binding,
            guidance=cfg.to_dict(),
            schedule=sched.to_dict(),
            denoiser={"kind": "toy", **spec.to_dict()},
            seed=c["seed"],
            fresh_noise=bool(c["fresh_noise"]),
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def _run_dir(out: str | None, manifest: RunManifest) -> Path:
    if out:
        return Path(out)
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    return root / hashlib.sha256(manifest.to_json().encode()).hexdigest()[:12]


# subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    video, tracklets = synth_fixture(args.kind, seed=args.seed, frames=args.frames,
                                     height=args.height, width=args.width)
    out = Path(args.out)
    save_png_frames(video, out)
    mft.save(out / "video.mft", video)
    save_tracklets(out / "tracklets.json", tracklets)
    print(out)
    return 0


def cmd_invert(args) -> int:
    manifest = manifest_from_args(args, edit=False)
    run_dir = _run_dir(args.out, manifest)
    run = TransferRun(manifest)
    run.invert()
    run.build_masks()
    run.save(run_dir)
    print(run_dir)
    return 0


def cmd_transfer(args) -> int:
    if args.manifest:
        manifest = RunManifest.load(args.manifest)
        manifest.artifacts = {}
    else:
        manifest = manifest_from_args(args)
    run_dir = _run_dir(args.out, manifest)
    transfer(manifest, run_dir)
    print(run_dir)
    return 0


def cmd_metrics(args) -> int:
    emb = ToyEmbedder()
    if args.run_dir:
        run_dir = Path(args.run_dir)
        manifest = RunManifest.load(run_dir)
        gen = load_video(args.video or run_dir / "output" / "video.mft")
        src = load_video(args.source or manifest.source_video)
        prompt = args.prompt or manifest.edit_prompt
        out = Path(args.out) if args.out else run_dir / "metrics.json"
    else:
        if not (args.video and args.source and args.prompt):
            raise UsageError("without a run directory, --video, --source and --prompt are required")
        gen, src, prompt = load_video(args.video), load_video(args.source), args.prompt
        out = Path(args.out or "metrics.json")
    src_tracks = load_tracklets(args.source_tracklets) if args.source_tracklets else centroid_tracklets(src)
    scores = {
        "temporal_consistency": temporal_consistency(gen, emb),
        "text_similarity": text_similarity(gen, tokenize(prompt), emb),
        "motion_fidelity": motion_fidelity(src_tracks, centroid_tracklets(gen)),
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(canonical_json(scores), encoding="utf-8")
    if args.scatter:
        path = Path(args.scatter)
        new = not path.exists()
        with path.open("a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(("text_similarity", "motion_fidelity"))
            w.writerow((repr(scores["text_similarity"]), repr(scores["motion_fidelity"])))
    print(json.dumps(scores))
    return 0


def _to_u8(a: np.ndarray) -> np.ndarray:
    """Per-map min-max normalization to [0, 255]; a constant map becomes zeros."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi <= lo:
        return np.zeros(a.shape, np.uint8)
    return np.round((a - lo) / (hi - lo) * 255).astype(np.uint8)


def _grid(tiles: list[list[np.ndarray]], pad: int = 1) -> np.ndarray:
    """Rows x cols of equal-size uint8 tiles separated by ``pad`` px of mid grey."""
    h, w = tiles[0][0].shape
    rows, cols = len(tiles), len(tiles[0])
    sheet = np.full((rows * (h + pad) - pad, cols * (w + pad) - pad), 128, np.uint8)
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            sheet[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = tile
    return sheet


def _save_png(path: Path, img: np.ndarray, scale: int = 8) -> Path:
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img).save(path)
    return path


def cmd_inspect(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = RunManifest.load(run_dir)
    out = Path(args.out) if args.out else run_dir / "inspect" / args.what
    if args.what == "loss":
        src = run_dir / "logs" / "guidance.csv"
        if not src.is_file():
            raise ArchiveLookupError(f"no loss log in {run_dir}")
        out.mkdir(parents=True, exist_ok=True)
        print(shutil.copyfile(src, out / "guidance.csv"))
        return 0
    spec = ToyDenoiserSpec.from_dict(manifest.denoiser)
    sites = {k: AttentionSite(k, v) for k, v in spec.site_dims().items() if not args.site or k in args.site}
    written = []
    if args.what == "masks":
        cfg = manifest.guidance_config()
        idx = resolve_key_tokens(tokenize(manifest.source_prompt), [a for a, _ in manifest.token_binding])
        binding = {i: i for i in idx}
        masks = MaskSet.load(run_dir, cfg.tau, binding)
        ts = args.t or masks.timesteps
        for t in ts:
            for site_id in sites:
                rows = [list(masks.stack(t, site_id, s) * 255) for s in sorted(binding)]
                written.append(_save_png(out / f"t{t:03}_{site_id}.png", _grid(rows)))
    else:
        archive = AttentionArchive.load(run_dir, args.phase, sites)
        ts = args.t or archive.timesteps()
        words = tokenize(manifest.source_prompt if args.phase == "inversion" else manifest.edit_prompt)
        for t in ts:
            for site_id, site in sites.items():
                h, w = site.spatial_dims
                m = archive.get(t, site_id, "cross").map
                rows = [[_to_u8(m[f, :, j].reshape(h, w)) for f in range(m.shape[0])] for j in range(m.shape[2])]
                written.append(_save_png(out / f"t{t:03}_{site_id}_cross.png", _grid(rows)))
                for kind in KINDS[1:]:
                    a = archive.get(t, site_id, kind).map
                    written.append(_save_png(out / f"t{t:03}_{site_id}_{kind}.png", _grid([[_to_u8(x) for x in a]]), 2))
        (out / "tokens.txt").write_text("\n".join(words) + "\n")
    print(out)
    return 0


COMMANDS = {"synth": cmd_synth, "invert": cmd_invert, "transfer": cmd_transfer,
            "metrics": cmd_metrics, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return exc.exit_code
    except MotionTransferError as exc:
        print(f"motiontransfer: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())

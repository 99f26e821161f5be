"""Acceptance gate: one PASS/FAIL line per criterion in the terminal summary."""
import hashlib
import time

import numpy as np
import pytest
import torch

from motiontransfer import mft
from motiontransfer.cli import DEFAULTS
from motiontransfer.fixtures import Tracklet, synth_fixture
from motiontransfer.guidance import GuidanceConfig, attention_mask_iou
from motiontransfer.masks import DEFAULT_TAU, binarize, build_mask_set
from motiontransfer.metrics import ToyEmbedder, motion_fidelity, temporal_consistency
from motiontransfer.pipeline import generate, invert
from motiontransfer.run import RunManifest, transfer
from motiontransfer.scheduler import LatentState, make_schedule
from motiontransfer.toy import ToyDenoiser, ToyDenoiserSpec

from conftest import EDIT, SOURCE, record_criterion
from helpers import gradient_check, small_problem
from oracles import two_pass_threshold


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_criterion_1_ddim_round_trip():
    start = time.perf_counter()
    video, _ = synth_fixture("moving-square", seed=0)
    sched = make_schedule(50)
    dn = ToyDenoiser(ToyDenoiserSpec.for_video(8, 32, 32, codec_factor=2), sched)
    prompt = dn.encode_prompt(*SOURCE)
    traj, _ = invert(video, prompt, sched, dn)
    res = generate(traj.final, None, prompt, None, GuidanceConfig(guided_steps=0), sched, dn)
    elapsed = time.perf_counter() - start
    err = _rel(res.video, video)
    assert traj.final.data.dtype == torch.float64
    ok = err < 1e-2 and elapsed < 60
    record_criterion(1, "DDIM round trip", ok, f"rel L2 {err:.2e} < 1e-2, {elapsed:.1f} s < 60 s")
    assert ok


def test_criterion_2_mask_oracle_and_properties():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        h, w = rng.integers(1, 12, size=2)
        a = rng.random((h, w)) ** rng.uniform(0.2, 5)
        if rng.random() < 0.05:
            a[:] = 0.0
        tau = float(rng.uniform(0.01, 0.99))
        mismatches += int(not np.array_equal(binarize(a, tau), two_pass_threshold(a.tolist(), tau)))
    mono = 0
    for _ in range(500):
        a = rng.random(tuple(rng.integers(1, 12, size=2)))
        t1, t2 = np.sort(rng.uniform(0.01, 0.99, size=2))
        mono += int(np.any(binarize(a, t2) > binarize(a, t1)))
    scale = 0
    for _ in range(500):
        a = rng.random(tuple(rng.integers(1, 12, size=2)))
        tau = float(rng.uniform(0.01, 0.99))
        c = float(np.exp(rng.uniform(-10, 10)))
        scale += int(not np.array_equal(binarize(c * a, tau), binarize(a, tau)))
    ok = mismatches == 0 and mono == 0 and scale == 0
    record_criterion(2, "mask oracle equivalence", ok,
                     f"{mismatches}/1000 oracle mismatches, {mono}/500 monotonicity, {scale}/500 scale violations")
    assert ok


def test_criterion_3_gradient_check():
    start = time.perf_counter()
    errors = [gradient_check(*small_problem(seed), h=1e-5) for seed in range(10)]
    elapsed = time.perf_counter() - start
    worst = max(errors)
    ok = worst < 1e-4 and elapsed < 120
    record_criterion(3, "gradient check", ok, f"max rel error {worst:.2e} < 1e-4 over 10 configs, {elapsed:.1f} s < 120 s")
    assert ok


def test_criterion_4_guidance_efficacy(square_bench):
    b = square_bench
    subject = {b.source.key_token_indices[0]: b.edit.key_token_indices[0]}
    iou_off = attention_mask_iou(b.runs["edit_unguided"].archive, b.edit_masks, b.guided_steps, binding=subject)
    iou_on = attention_mask_iou(b.runs["edit_guided"].archive, b.edit_masks, b.guided_steps, binding=subject)
    steps = b.runs["edit_guided"].steps
    descent = all(s.final["total"] < s.initial["total"] for s in steps)
    ok = iou_on >= 0.5 and iou_on >= 2 * iou_off and descent and len(steps) == 20
    record_criterion(4, "guidance efficacy", ok,
                     f"subject IoU guided {iou_on:.3f} vs unguided {iou_off:.3f} (x{iou_on / iou_off:.2f}), "
                     f"descent at {sum(s.final['total'] < s.initial['total'] for s in steps)}/{len(steps)} steps")
    assert ok


def test_criterion_5_defaults():
    c = GuidanceConfig()
    found = {
        "tau": (c.tau, DEFAULT_TAU, DEFAULTS["tau"]),
        "alpha": (c.alpha, DEFAULTS["alpha"]),
        "lambdas": (c.lambda_cross, c.lambda_self, c.lambda_temporal,
                    DEFAULTS["lambda_cross"], DEFAULTS["lambda_self"], DEFAULTS["lambda_temporal"]),
        "guided_steps": (c.guided_steps, DEFAULTS["guided_steps"]),
        "total_steps": (make_schedule().total_steps, DEFAULTS["total_steps"]),
        "iters": (c.iters_per_step, DEFAULTS["iters"]),
    }
    want = {"tau": 0.4, "alpha": 5.0, "lambdas": 1.0, "guided_steps": 20, "total_steps": 50, "iters": 20}
    ok = all(all(v == want[k] for v in vals) for k, vals in found.items())
    record_criterion(5, "hyperparameter defaults", ok,
                     "tau=0.4 alpha=5.0 lambda=1.0 guided 20 of 50 steps, 20 iters")
    assert ok


def test_criterion_6_resolution_bookkeeping():
    spec = ToyDenoiserSpec.for_video(2, 320, 576, codec_factor=8, stem_stride=2, width=8, text_dim=8)
    sched = make_schedule(2)
    dn = ToyDenoiser(spec, sched)
    out = dn.predict_noise(LatentState(torch.zeros(spec.latent_dims, dtype=torch.float64), 1), 1,
                           dn.encode_prompt("a bear walking", "bear"))
    sizes = {k: s.size_wh for k, s in dn.sites.items()}
    shapes_ok = all(out.attention[(k, "cross")].shape[1] == w * h for k, (w, h) in sizes.items())
    ok = sizes == {"mid": (9, 5), "down_last": (18, 10), "up_first": (18, 10)} and shapes_ok
    record_criterion(6, "resolution bookkeeping", ok,
                     f"576x320 -> mid {sizes['mid'][0]}x{sizes['mid'][1]}, "
                     f"down_last {sizes['down_last'][0]}x{sizes['down_last'][1]}, "
                     f"up_first {sizes['up_first'][0]}x{sizes['up_first'][1]}")
    assert ok


def test_criterion_7_metrics_sanity():
    rng = np.random.default_rng(7)
    emb = ToyEmbedder()
    static = np.broadcast_to(rng.random((32, 32, 3)), (8, 32, 32, 3))
    tc = temporal_consistency(static, emb)
    src = [Tracklet(np.cumsum(rng.standard_normal((8, 2)), axis=0) + 16) for _ in range(3)]
    neg = [Tracklet(t.points[0] - (t.points - t.points[0])) for t in src]
    mf_same = motion_fidelity(src, src)
    mf_neg = motion_fidelity(src, neg)
    gen = [Tracklet(np.cumsum(rng.standard_normal((8, 2)), axis=0)) for _ in range(2)]
    shift = np.array([11.0, -7.5])
    mf = motion_fidelity(src, gen)
    inv = abs(motion_fidelity([Tracklet(t.points + shift) for t in src], [Tracklet(t.points - shift) for t in gen]) - mf)
    ok = abs(tc - 1) <= 1e-6 and abs(mf_same - 1) <= 1e-6 and abs(mf_neg + 1) <= 1e-6 and inv <= 1e-12
    record_criterion(7, "metrics sanity", ok,
                     f"static TC {tc:.7f}, MF(src,src) {mf_same:.7f}, MF(src,-src) {mf_neg:.7f}, shift delta {inv:.1e}")
    assert ok


def test_criterion_8_replay(tmp_path):
    video, _ = synth_fixture("moving-square", seed=0)
    src = mft.save(tmp_path / "source.mft", video)
    manifest = RunManifest(source_video=str(src), source_prompt=SOURCE[0], source_key_tokens=SOURCE[1].split(),
                           edit_prompt=EDIT[0], edit_key_tokens=EDIT[1].split())
    transfer(manifest, tmp_path / "first")
    transfer(RunManifest.load(tmp_path / "first"), tmp_path / "second")
    a = (tmp_path / "first" / "output" / "video.mft").read_bytes()
    b = (tmp_path / "second" / "output" / "video.mft").read_bytes()
    saved = RunManifest.load(tmp_path / "second")
    ok = a == b and saved.artifacts["output/video.mft"] == RunManifest.load(tmp_path / "first").artifacts["output/video.mft"]
    record_criterion(8, "determinism and replay", ok,
                     f"video.mft sha256 {hashlib.sha256(a).hexdigest()[:16]} == {hashlib.sha256(b).hexdigest()[:16]}")
    assert ok

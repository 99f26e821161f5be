import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from motiontransfer.fixtures import synth_fixture
from motiontransfer.guidance import GuidanceConfig
from motiontransfer.masks import build_mask_set
from motiontransfer.pipeline import generate, guided_timesteps, invert
from motiontransfer.scheduler import make_schedule
from motiontransfer.toy import ToyDenoiser, ToyDenoiserSpec

SOURCE = ("a square moving", "square moving")
EDIT = ("a disc moving", "disc moving")

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    _ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number}: {name} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@dataclass
class SquareBench:
    """Moving-square fixture inverted once, regenerated under four settings."""

    video: np.ndarray
    sched: object
    denoiser: ToyDenoiser
    source: object
    edit: object
    trajectory: object
    archive: object
    masks: object
    edit_masks: object
    guided_steps: list
    runs: dict


@pytest.fixture(scope="session")
def square_bench():
    video, _ = synth_fixture("moving-square", seed=0)
    sched = make_schedule(50)
    dn = ToyDenoiser(ToyDenoiserSpec.for_video(8, 32, 32, codec_factor=2), sched)
    source = dn.encode_prompt(*SOURCE)
    edit = dn.encode_prompt(*EDIT)
    traj, archive = invert(video, source, sched, dn)
    masks = build_mask_set(archive, source.key_token_indices, 0.4)
    edit_masks = build_mask_set(archive, source.key_token_indices, 0.4,
                                token_binding=dict(zip(source.key_token_indices, edit.key_token_indices)))
    off, on = GuidanceConfig(guided_steps=0), GuidanceConfig()
    runs = {
        "source_unguided": generate(traj.final, masks, source, archive, off, sched, dn),
        "source_guided": generate(traj.final, masks, source, archive, on, sched, dn),
        "edit_unguided": generate(traj.final, edit_masks, edit, archive, off, sched, dn),
        "edit_guided": generate(traj.final, edit_masks, edit, archive, on, sched, dn),
    }
    return SquareBench(video, sched, dn, source, edit, traj, archive, masks, edit_masks,
                       guided_timesteps(sched, on), runs)

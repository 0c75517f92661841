from pathlib import Path

import numpy as np
import pytest
import torch

from srdetect.media_forge import ForgeConfig, forge_dataset, write_frames
from srdetect.media_forge.synth import synth_clip

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def natural_frames():
    """A few synthetic "natural" frames (1/f texture, edges, sensor noise)."""
    return [synth_clip(np.random.default_rng(s), size=64, n_frames=1)[0] for s in range(4)]


def write_toy_sources(root: Path, n_clips: int, size: int = 32, n_frames: int = 6, seed: int = 0) -> Path:
    for i in range(n_clips):
        frames = synth_clip(np.random.default_rng([seed, i]), size=size, n_frames=n_frames)
        write_frames(root / f"clip{i:03d}", frames)
    return root


@pytest.fixture(scope="session")
def toy_sources(tmp_path_factory):
    return write_toy_sources(tmp_path_factory.mktemp("toy_src"), 8)


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory, toy_sources):
    cfg = ForgeConfig(upscalers=("bilinear", "bicubic"), split_fractions=(0.5, 0.25, 0.25))
    return forge_dataset(toy_sources, tmp_path_factory.mktemp("toy_forged"), cfg, seed=7)


def pytest_terminal_summary(terminalreporter):
    import sys

    acc = sys.modules.get("tests.test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        ok, detail = acc.RESULTS[n]
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    for table in acc.TABLES:
        tr.write_line("")
        for line in table.splitlines():
            tr.write_line(line)

"""Deterministic block-DCT stand-in for a lossy video encoder.

Each frame is converted to full-range BT.601 Y'CbCr, split into 8x8 blocks
(edges replicated), transformed with an orthonormal DCT-II and quantized with
the JPEG Annex K tables scaled by ``q / 12``. Larger ``q`` means coarser
quantization, mirroring an x264 CRF knob.

The DC term uses a fixed, very fine step so block means (and therefore flat
frames) pass through unchanged; all AC terms use the scaled tables. Because
every reconstructed coefficient lies on the quantization lattice, compressing
an already-compressed frame at the same ``q`` reproduces it bit for bit,
provided no pixel had to be clipped to ``[0, 1]``.
"""

from __future__ import annotations

import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

Q_MIN, Q_MAX = 15, 30
BLOCK = 8
DC_STEP = 2.0**-16

LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)

RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
YCC_TO_RGB = np.linalg.inv(RGB_TO_YCC)
YCC_OFFSET = np.array([0.0, 128.0, 128.0])


def dct_matrix(n: int = BLOCK) -> np.ndarray:
    """Orthonormal DCT-II basis, rows indexed by frequency."""
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    d = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    d[0] /= np.sqrt(2.0)
    return d


DCT = dct_matrix()


@dataclass(frozen=True)
class CompressionParams:
    q: int
    block_size: int = BLOCK

    def __post_init__(self):
        if isinstance(self.q, bool) or int(self.q) != self.q:
            raise ValueError(f"q must be an integer, got {self.q!r}")
        if not Q_MIN <= self.q <= Q_MAX:
            raise ValueError(f"q must lie in [{Q_MIN}, {Q_MAX}], got {self.q}")
        if self.block_size != BLOCK:
            raise ValueError("only 8x8 blocks are supported")

    @property
    def scale(self) -> float:
        return self.q / 12.0


def quant_steps(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-coefficient quantizer steps ``(luma, chroma)`` for quality ``q``."""
    s = CompressionParams(q).scale
    luma, chroma = LUMA_TABLE * s, CHROMA_TABLE * s
    luma[0, 0] = chroma[0, 0] = DC_STEP
    return luma, chroma


def _blocks(channel: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    padded = np.pad(channel, ((0, ph), (0, pw)), mode="edge")
    hb, wb = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    return padded.reshape(hb, BLOCK, wb, BLOCK).transpose(0, 2, 1, 3)


def _unblock(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    hb, wb = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(hb * BLOCK, wb * BLOCK)[:h, :w]


def _quantize_channel(channel: np.ndarray, step: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    coef = DCT @ _blocks(channel - 128.0) @ DCT.T
    coef = np.round(coef / step) * step
    return _unblock(DCT.T @ coef @ DCT, h, w) + 128.0


def compress_frame(img: np.ndarray, q: int) -> np.ndarray:
    """Run one ``(H, W, 3)`` frame in ``[0, 1]`` through the quantizer."""
    luma_step, chroma_step = quant_steps(q)
    img = np.asarray(img, dtype=np.float64)
    ycc = img * 255.0 @ RGB_TO_YCC.T + YCC_OFFSET
    out = np.empty_like(ycc)
    out[..., 0] = _quantize_channel(ycc[..., 0], luma_step)
    out[..., 1] = _quantize_channel(ycc[..., 1], chroma_step)
    out[..., 2] = _quantize_channel(ycc[..., 2], chroma_step)
    rgb = (out - YCC_OFFSET) @ YCC_TO_RGB.T / 255.0
    return np.clip(rgb, 0.0, 1.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


class ExternalEncoder:
    """Alternate backend that shells out to an H.264 encoder (ffmpeg + libx264).

    ``q`` is passed straight through as the CRF. Frames come back decoded as
    8-bit RGB, so results depend on the installed encoder build.
    """

    def __init__(self, executable: str = "ffmpeg", preset: str = "medium"):
        self.executable = executable
        self.preset = preset

    def available(self) -> bool:
        return shutil.which(self.executable) is not None

    def __call__(self, frames: np.ndarray, q: int) -> np.ndarray:
        from .frames import read_frames, write_frames

        if not self.available():
            raise RuntimeError(f"external encoder {self.executable!r} not found on PATH")
        CompressionParams(q)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            write_frames(tmp / "src", frames)
            (tmp / "dst").mkdir()
            video = tmp / "clip.mp4"
            common = [self.executable, "-loglevel", "error", "-y"]
            subprocess.run(
                common
                + ["-i", str(tmp / "src" / "%06d.png"), "-c:v", "libx264", "-preset", self.preset]
                + ["-crf", str(q), "-pix_fmt", "yuv420p", str(video)],
                check=True,
            )
            subprocess.run(
                common + ["-i", str(video), "-start_number", "0", str(tmp / "dst" / "%06d.png")],
                check=True,
            )
            return read_frames(tmp / "dst")

"""Feature encoder, projection head and classification head.

The model is kept functional: :class:`ModelParams` owns a flat, ordered
mapping of parameter names to tensors and the forward functions read from
it. That keeps checkpoints, optimizer state and finite-difference checks
independent of any module hierarchy.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import CheckpointError

MAGIC = b"SRDM"
FORMAT_VERSION = 1
PIXEL_MEAN, PIXEL_STD = 0.5, 0.25


@dataclass
class EncoderConfig:
    k_frames: int = 2
    backbone: str = "desk_cnn"
    conv_widths: tuple[int, ...] = (32, 64, 128, 128)
    proj_dim: int = 128
    proj_layers: int = 3
    cls_hidden: tuple[int, ...] = (64, 32)

    def __post_init__(self):
        self.conv_widths = tuple(self.conv_widths)
        self.cls_hidden = tuple(self.cls_hidden)
        if self.k_frames not in (1, 2, 3):
            raise ValueError("k_frames must be 1, 2 or 3")
        if self.backbone not in ("desk_cnn", "resnet50"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.proj_layers < 1:
            raise ValueError("proj_layers must be >= 1")

    @property
    def input_channels(self) -> int:
        return 3 * self.k_frames

    @property
    def repr_dim(self) -> int:
        return 2048 if self.backbone == "resnet50" else self.conv_widths[-1]

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class ModelParams:
    config: EncoderConfig
    tensors: "OrderedDict[str, torch.Tensor]"
    init_seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def named(self):
        return self.tensors.items()

    def to(self, dtype: torch.dtype) -> "ModelParams":
        tensors = OrderedDict((k, v.detach().to(dtype).clone()) for k, v in self.tensors.items())
        return ModelParams(self.config, tensors, self.init_seed, dict(self.meta))

    def clone(self) -> "ModelParams":
        return self.to(next(iter(self.tensors.values())).dtype)

    def requires_grad_(self, flag: bool = True) -> "ModelParams":
        for t in self.tensors.values():
            t.requires_grad_(flag)
        return self

    def num_parameters(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def equal(self, other: "ModelParams") -> bool:
        return list(self.tensors) == list(other.tensors) and all(
            torch.equal(a, other.tensors[k]) for k, a in self.tensors.items()
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.tensors.items():
            h.update(k.encode())
            h.update(v.detach().cpu().numpy().astype("<f4").tobytes())
        return h.hexdigest()


def _he(gen: torch.Generator, shape: tuple[int, ...], fan_in: int) -> torch.Tensor:
    return torch.randn(shape, generator=gen, dtype=torch.float64).mul_(np.sqrt(2.0 / fan_in)).float()


def _head_dims(config: EncoderConfig) -> tuple[list[int], list[int]]:
    proj = [config.repr_dim] + [config.proj_dim] * config.proj_layers
    cls = [config.proj_dim, *config.cls_hidden, 1]
    return proj, cls


def init_params(config: EncoderConfig, seed: int = 0) -> ModelParams:
    """He-initialized weights, zero biases, deterministic in ``seed``."""
    gen = torch.Generator().manual_seed(seed)
    tensors: OrderedDict[str, torch.Tensor] = OrderedDict()
    if config.backbone == "desk_cnn":
        c_in = config.input_channels
        for i, c_out in enumerate(config.conv_widths):
            tensors[f"encoder.conv{i}.weight"] = _he(gen, (c_out, c_in, 3, 3), c_in * 9)
            tensors[f"encoder.conv{i}.bias"] = torch.zeros(c_out)
            c_in = c_out
    else:
        torch.manual_seed(seed)
        for k, v in _resnet50(config).state_dict().items():
            tensors[f"encoder.{k}"] = v.detach().float().clone()
    proj, cls = _head_dims(config)
    for prefix, dims in (("projector", proj), ("classifier", cls)):
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            tensors[f"{prefix}.fc{i}.weight"] = _he(gen, (b, a), a)
            tensors[f"{prefix}.fc{i}.bias"] = torch.zeros(b)
    return ModelParams(config, tensors, init_seed=seed)


def _resnet50(config: EncoderConfig):
    from torchvision.models import resnet50

    net = resnet50(weights=None)
    net.conv1 = torch.nn.Conv2d(config.input_channels, 64, kernel_size=7, stride=2, padding=3, bias=False)
    net.fc = torch.nn.Identity()
    return net


def normalize_pixels(x: torch.Tensor) -> torch.Tensor:
    return (x - PIXEL_MEAN) / PIXEL_STD


def _check_batch(params: ModelParams, x: torch.Tensor) -> None:
    if x.ndim != 4 or x.shape[1] != params.config.input_channels:
        raise ValueError(
            f"expected batch (N, {params.config.input_channels}, H, W), got {tuple(x.shape)}"
        )
    if x.shape[0] < 1:
        raise ValueError("empty batch")


def encode(params: ModelParams, x: torch.Tensor, trace: list | None = None) -> torch.Tensor:
    """Map a pixel batch ``(N, 3k, H, W)`` in ``[0, 1]`` to representations ``(N, repr_dim)``.

    ``trace``, when given, collects every ReLU pre-activation (used by
    gradient checks to detect kink crossings).
    """
    _check_batch(params, x)
    p = params.tensors
    h = normalize_pixels(x)
    if params.config.backbone == "resnet50":
        from torch.func import functional_call

        net = _resnet50(params.config)
        state = {k.removeprefix("encoder."): v for k, v in p.items() if k.startswith("encoder.")}
        net.eval()
        return functional_call(net, state, (h,))
    for i in range(len(params.config.conv_widths)):
        h = F.conv2d(h, p[f"encoder.conv{i}.weight"], p[f"encoder.conv{i}.bias"], stride=2, padding=1)
        if trace is not None:
            trace.append(h)
        h = F.relu(h)
    return h.mean(dim=(2, 3))


def _mlp(params: ModelParams, prefix: str, x: torch.Tensor, trace: list | None) -> torch.Tensor:
    p = params.tensors
    n = sum(1 for k in p if k.startswith(prefix + ".") and k.endswith(".weight"))
    if x.ndim != 2 or x.shape[1] != p[f"{prefix}.fc0.weight"].shape[1]:
        raise ValueError(f"{prefix}: expected (N, {p[f'{prefix}.fc0.weight'].shape[1]}) input, got {tuple(x.shape)}")
    for i in range(n):
        x = F.linear(x, p[f"{prefix}.fc{i}.weight"], p[f"{prefix}.fc{i}.bias"])
        if i < n - 1:
            if trace is not None:
                trace.append(x)
            x = F.relu(x)
    return x


def project(params: ModelParams, h: torch.Tensor, trace: list | None = None) -> torch.Tensor:
    """Projection head; output is deliberately left un-normalized."""
    return _mlp(params, "projector", h, trace)


def classify(params: ModelParams, z: torch.Tensor, trace: list | None = None) -> torch.Tensor:
    """One logit per row, ``(N, 1)``; ``sigmoid(logit)`` is P(upscaled)."""
    return _mlp(params, "classifier", z, trace)


def forward(params: ModelParams, x: torch.Tensor, trace: list | None = None):
    """Full pass: returns ``(h, z, logits)``."""
    h = encode(params, x, trace)
    z = project(params, h, trace)
    return h, z, classify(params, z, trace)


def save_checkpoint(params: ModelParams, path: str | Path, meta: dict | None = None) -> Path:
    """Write the binary checkpoint format.

    Layout (little-endian): ``b"SRDM"``, u32 version, u32 length + config
    digest (ASCII hex), u32 length + header JSON (config, init seed, metadata),
    u32 array count, then per array: u32 name length, UTF-8 name, u32 ndim,
    ndim x u32 dims, float32 payload.
    """
    path = Path(path)
    digest = params.config.digest().encode()
    header = json.dumps(
        {"config": params.config.to_dict(), "init_seed": params.init_seed, "meta": {**params.meta, **(meta or {})}},
        sort_keys=True,
    ).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    for blob in (digest, header):
        buf.write(struct.pack("<I", len(blob)))
        buf.write(blob)
    buf.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> ModelParams:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = data[pos : pos + n]
        pos += n
        return out

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an SRDM checkpoint (bad magic)")
    version = u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    digest = take(u32()).decode("ascii")
    try:
        header = json.loads(take(u32()))
        config = EncoderConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if config.digest() != digest:
        raise CheckpointError(f"{path}: config digest mismatch")
    tensors = OrderedDict()
    for _ in range(u32()):
        name = take(u32()).decode()
        ndim = u32()
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after arrays")
    return ModelParams(config, tensors, init_seed=header.get("init_seed"), meta=header.get("meta", {}))

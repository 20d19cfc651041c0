"""Two-head UNet: amodal probability map plus positive uncertainty map.

The network sees five channels (RGB scaled to [0, 1], the input mask and
the occlusion-boundary mask) and emits two: channel 0 through a sigmoid
(amodal probability), channel 1 through a softplus floored at
``UNCERTAINTY_FLOOR`` (uncertainty).

Checkpoint container (all integers little-endian)::

    8 bytes   magic b"AMODALCK"
    uint32    format version (currently 1)
    uint32    header length in bytes
    ...       header: UTF-8 JSON {"config": {...}, "tensors": [
                  {"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    ...       raw tensor bytes, C order, offsets relative to this block
    uint32    CRC-32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import masks as M

IN_CHANNELS = 5
UNCERTAINTY_FLOOR = 1e-6

MAGIC = b"AMODALCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 256
    base_channels: int = 16
    depth: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.input_size % (2**self.depth):
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2**depth={2**self.depth}"
            )


@dataclass
class ModelOutput:
    mask_prob: np.ndarray
    uncertainty: np.ndarray


def _norm(ch):
    return nn.GroupNorm(min(8, ch), ch)


class DoubleConv(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
        )


class Up(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cin // 2, 2, stride=2)
        self.conv = DoubleConv(cin // 2 + cout, cout)

    def forward(self, x, skip):
        return self.conv(torch.cat([skip, self.up(x)], dim=1))


class AmodalUNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        c = config.base_channels
        widths = [c * 2**i for i in range(config.depth + 1)]
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.inc = DoubleConv(IN_CHANNELS, widths[0])
            self.downs = nn.ModuleList(
                DoubleConv(widths[i], widths[i + 1]) for i in range(config.depth)
            )
            self.ups = nn.ModuleList(
                Up(widths[i + 1], widths[i]) for i in reversed(range(config.depth))
            )
            self.head = nn.Conv2d(widths[0], 2, 1)

    def forward(self, x):
        """Map a ``(B, 5, H, W)`` tensor to ``(mask_prob, uncertainty)``."""
        skips = [self.inc(x)]
        for down in self.downs:
            skips.append(down(F.max_pool2d(skips[-1], 2)))
        y = skips.pop()
        for up in self.ups:
            y = up(y, skips.pop())
        logits = self.head(y)
        mask_prob = torch.sigmoid(logits[:, 0])
        uncertainty = F.softplus(logits[:, 1]).clamp_min(UNCERTAINTY_FLOOR)
        return mask_prob, uncertainty

    @torch.no_grad()
    def predict(self, image, input_mask, boundary) -> ModelOutput:
        """Single-image inference on numpy inputs.

        Any spatial size works; inputs are zero-padded up to a multiple of
        ``2**depth`` and the outputs cropped back.
        """
        x = encode_inputs(image, input_mask, boundary)
        h, w = x.shape[1:]
        k = 2**self.config.depth
        ph, pw = (-h) % k, (-w) % k
        x = F.pad(x, (0, pw, 0, ph))
        was_training = self.training
        self.eval()
        try:
            p, u = self(x[None])
        finally:
            self.train(was_training)
        return ModelOutput(p[0, :h, :w].numpy(), u[0, :h, :w].numpy())


def encode_inputs(image, input_mask, boundary) -> torch.Tensor:
    """Stack RGB, input mask and boundary into a ``(5, H, W)`` float32 tensor."""
    image = np.asarray(image)
    input_mask, boundary = M.as_mask(input_mask), M.as_mask(boundary)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got {image.shape}")
    if not (image.shape[:2] == input_mask.shape == boundary.shape):
        raise ValueError(
            f"shape mismatch: image {image.shape[:2]}, mask {input_mask.shape}, "
            f"boundary {boundary.shape}"
        )
    if image.dtype == np.uint8:
        rgb = image.astype(np.float32) / 255.0
    else:
        rgb = image.astype(np.float32)
    stacked = np.concatenate(
        [rgb.transpose(2, 0, 1), input_mask[None], boundary[None]], axis=0
    ).astype(np.float32)
    return torch.from_numpy(np.ascontiguousarray(stacked))


def forward(model, image, input_mask, boundary) -> ModelOutput:
    return model.predict(image, input_mask, boundary)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# -- checkpoints ---------------------------------------------------------------


def checkpoint_bytes(model: AmodalUNet) -> bytes:
    tensors, chunks, offset = [], [], 0
    for name, t in model.state_dict().items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy())
        raw = arr.tobytes()
        tensors.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": asdict(model.config), "tensors": tensors}, sort_keys=True
    ).encode()
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: AmodalUNet, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


def load_checkpoint_bytes(data: bytes) -> AmodalUNet:
    prefix = len(MAGIC) + 8
    if len(data) < prefix + 4 or data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic or too short)")
    version, header_len = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"checkpoint format version {version}, reader supports {FORMAT_VERSION}"
        )
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptCheckpoint("checksum mismatch (truncated or damaged file)")
    try:
        header = json.loads(data[prefix : prefix + header_len])
        config = ModelConfig(**header["config"])
        payload = data[prefix + header_len : -4]
        state = {}
        for spec in header["tensors"]:
            raw = payload[spec["offset"] : spec["offset"] + spec["nbytes"]]
            arr = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"])
            state[spec["name"]] = torch.from_numpy(arr.copy())
        model = AmodalUNet(config)
        model.load_state_dict(state)
    except (ValueError, KeyError, TypeError, RuntimeError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint: {exc}") from exc
    model.eval()
    return model


def load_checkpoint(path) -> AmodalUNet:
    with open(path, "rb") as f:
        return load_checkpoint_bytes(f.read())

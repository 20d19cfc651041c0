"""Binary mask utilities: morphology, overlap metrics and COCO-style RLE.

Masks are plain 2-D numpy boolean arrays. Run-length encoding follows the
uncompressed COCO convention: column-major scan, alternating 0-runs and
1-runs, always starting with a (possibly empty) 0-run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import ndimage

DEFAULT_RADIUS = 1


class MaskShapeError(ValueError):
    """Raised when two masks that must share dimensions do not."""


class RleError(ValueError):
    """Raised for run-length encodings that violate their invariants."""


@dataclass(frozen=True)
class RleMask:
    height: int
    width: int
    counts: List[int]

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            height, width = (int(v) for v in obj["size"])
            counts = [int(c) for c in obj["counts"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise RleError(f"malformed RLE object: {exc}") from exc
        return cls(height, width, counts)


def as_mask(mask) -> np.ndarray:
    """Coerce ``mask`` to a 2-D boolean array with non-zero dimensions."""
    arr = np.asarray(mask)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MaskShapeError(f"expected a non-empty 2-D mask, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def _pair(a, b):
    a, b = as_mask(a), as_mask(b)
    if a.shape != b.shape:
        raise MaskShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def area(mask) -> int:
    return int(np.count_nonzero(mask))


def rle_encode(mask) -> RleMask:
    mask = as_mask(mask)
    flat = mask.ravel(order="F").astype(np.int8)
    # positions where the value changes, bracketed by the start/end of the scan
    change = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return RleMask(mask.shape[0], mask.shape[1], counts)


def rle_decode(rle: RleMask) -> np.ndarray:
    if rle.height < 1 or rle.width < 1:
        raise RleError(f"invalid mask size {rle.height}x{rle.width}")
    counts = np.asarray(rle.counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise RleError("RLE counts must be non-negative")
    total = int(counts.sum())
    if total != rle.height * rle.width:
        raise RleError(
            f"RLE counts sum to {total}, expected {rle.height * rle.width}"
        )
    values = np.arange(counts.size) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((rle.height, rle.width), order="F")


def dilate(mask, radius: int = DEFAULT_RADIUS) -> np.ndarray:
    """Dilate with a square structuring element of side ``2 * radius + 1``."""
    mask = as_mask(mask)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0:
        return mask.copy()
    return ndimage.maximum_filter(
        mask, size=2 * radius + 1, mode="constant", cval=False
    )


def occlusion_boundary(mask_a, mask_b, radius: int = DEFAULT_RADIUS) -> np.ndarray:
    """Contact band between two masks: intersection of their dilations."""
    mask_a, mask_b = _pair(mask_a, mask_b)
    if radius < 1:
        raise ValueError("boundary radius must be >= 1")
    return dilate(mask_a, radius) & dilate(mask_b, radius)


def adjacent(mask_a, mask_b, radius: int = DEFAULT_RADIUS) -> bool:
    return bool(occlusion_boundary(mask_a, mask_b, radius).any())


def iou(mask_a, mask_b) -> float:
    """Intersection over union; two empty masks count as perfect agreement."""
    mask_a, mask_b = _pair(mask_a, mask_b)
    union = np.count_nonzero(mask_a | mask_b)
    if union == 0:
        return 1.0
    return np.count_nonzero(mask_a & mask_b) / union


def bbox(mask) -> tuple:
    """Return ``(r0, r1, c0, c1)`` half-open bounds of the 1-cells."""
    mask = as_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("empty mask has no bounding box")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def translate(mask, offset: Sequence[int]) -> np.ndarray:
    """Shift a mask by ``(dy, dx)``; cells pushed off the grid are dropped."""
    mask = as_mask(mask)
    dy, dx = (int(v) for v in offset)
    out = np.zeros_like(mask)
    h, w = mask.shape
    src_r = slice(max(0, -dy), min(h, h - dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_r = slice(max(0, dy), min(h, h + dy))
    dst_c = slice(max(0, dx), min(w, w + dx))
    if src_r.start < src_r.stop and src_c.start < src_c.stop:
        out[dst_r, dst_c] = mask[src_r, src_c]
    return out

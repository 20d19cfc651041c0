"""Static PNG panels for inspecting a completion."""
from __future__ import annotations

import os
from typing import List

import numpy as np
from PIL import Image

PANELS = ("image", "modal", "boundary", "amodal", "uncertainty")

# black -> red -> yellow -> white
_HEAT_STOPS = np.array([[0, 0, 0], [255, 0, 0], [255, 255, 0], [255, 255, 255]], float)


def heat_map(values: np.ndarray) -> np.ndarray:
    """Min-max normalise per image and colour; constant input maps to black."""
    v = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(v)
    v = np.where(finite, v, 0.0)
    lo, hi = (v[finite].min(), v[finite].max()) if finite.any() else (0.0, 0.0)
    t = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    pos = t * (len(_HEAT_STOPS) - 1)
    i = np.clip(np.floor(pos).astype(int), 0, len(_HEAT_STOPS) - 2)
    frac = (pos - i)[..., None]
    rgb = _HEAT_STOPS[i] * (1 - frac) + _HEAT_STOPS[i + 1] * frac
    return np.rint(rgb).astype(np.uint8)


def mask_image(mask) -> Image.Image:
    return Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8), "L")


def render(scene, prediction, out_dir, prefix: str = None) -> List[str]:
    """Write the five panels for one instance; returns the file paths.

    Files are named ``<scene_id>_inst<instance_id>_<panel>.png``.
    """
    os.makedirs(out_dir, exist_ok=True)
    prefix = prefix or f"{scene.scene_id}_inst{prediction.instance_id}"
    boundary = prediction.boundary
    if boundary is None:
        boundary = np.zeros_like(prediction.modal_mask)
    unc = prediction.uncertainty_map
    if unc is None:
        unc = np.zeros(prediction.modal_mask.shape)
    images = {
        "image": Image.fromarray(np.asarray(scene.image, dtype=np.uint8), "RGB"),
        "modal": mask_image(prediction.modal_mask),
        "boundary": mask_image(boundary),
        "amodal": mask_image(prediction.amodal_mask),
        "uncertainty": Image.fromarray(heat_map(unc), "RGB"),
    }
    paths = []
    for name in PANELS:
        path = os.path.join(out_dir, f"{prefix}_{name}.png")
        images[name].save(path)
        paths.append(path)
    return paths

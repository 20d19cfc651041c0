"""Scenes, synthetic occlusion manufacturing and dataset I/O.

Training data is made from modal annotations only: two instances of a
scene are picked as occludee and occluder, the occluder is translated so
that it partially covers the occludee, pasted onto the image with a
feathered alpha, and two kinds of training triplets are derived from the
result (see :func:`build_triplet`).
"""
from __future__ import annotations

import enum
import json
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from . import masks as M

log = logging.getLogger(__name__)

DEFAULT_OVERLAP = (0.1, 0.7)
DEFAULT_FEATHER = 1
MAX_RETRIES = 50


class SamplingExhausted(RuntimeError):
    """No admissible occluder placement was found within the retry budget."""


class DatasetError(RuntimeError):
    pass


class MissingImage(DatasetError):
    pass


class MalformedAnnotation(DatasetError):
    pass


class SetTag(str, enum.Enum):
    SET1 = "set1"  # occluded occludee mask in, full occludee mask out
    SET2 = "set2"  # occluder mask in, same mask out


@dataclass
class SceneInstance:
    instance_id: int
    category_id: int
    modal_mask: np.ndarray
    amodal_mask: Optional[np.ndarray] = None
    image_patch: Optional[np.ndarray] = None
    # 0 is front-most; only known for synthetic scenes
    depth: Optional[int] = None

    def __post_init__(self):
        self.modal_mask = M.as_mask(self.modal_mask)
        if not self.modal_mask.any():
            raise ValueError(f"instance {self.instance_id}: empty modal mask")
        if self.amodal_mask is not None:
            self.amodal_mask = M.as_mask(self.amodal_mask)
            if self.amodal_mask.shape != self.modal_mask.shape:
                raise ValueError(f"instance {self.instance_id}: amodal/modal shape mismatch")
            if (self.modal_mask & ~self.amodal_mask).any():
                raise ValueError(
                    f"instance {self.instance_id}: amodal mask does not contain modal mask"
                )


@dataclass
class Scene:
    image: np.ndarray  # H x W x 3, uint8
    instances: List[SceneInstance]
    scene_id: str = "scene"

    def __post_init__(self):
        self.image = np.asarray(self.image)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"scene image must be HxWx3, got {self.image.shape}")
        for inst in self.instances:
            if inst.modal_mask.shape != self.shape:
                raise ValueError(
                    f"instance {inst.instance_id} mask shape {inst.modal_mask.shape} "
                    f"does not match image {self.shape}"
                )
            if inst.image_patch is None:
                r0, r1, c0, c1 = M.bbox(inst.modal_mask)
                inst.image_patch = self.image[r0:r1, c0:c1].copy()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape[:2]

    def instance(self, instance_id: int) -> SceneInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)


@dataclass
class OcclusionPair:
    occludee: SceneInstance
    occluder: SceneInstance
    offset: Tuple[int, int]

    @property
    def occluder_mask(self) -> np.ndarray:
        """Occluder modal mask at its pasted position."""
        return M.translate(self.occluder.modal_mask, self.offset)

    def overlap_fraction(self) -> float:
        covered = np.count_nonzero(self.occluder_mask & self.occludee.modal_mask)
        return covered / np.count_nonzero(self.occludee.modal_mask)


@dataclass
class TrainingTriplet:
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    boundary: np.ndarray
    input_mask: np.ndarray
    target_mask: np.ndarray
    weight_region: np.ndarray
    set_tag: SetTag


def sample_occlusion_pair(
    scene: Scene,
    rng: np.random.Generator,
    overlap_min: float = DEFAULT_OVERLAP[0],
    overlap_max: float = DEFAULT_OVERLAP[1],
    max_retries: int = MAX_RETRIES,
    occluder_scene: Optional[Scene] = None,
) -> OcclusionPair:
    """Pick an occludee/occluder pair and a partially-occluding offset.

    The occluder is taken from ``occluder_scene`` when given (cross-scene
    sampling), otherwise from ``scene`` itself. Offsets are rejection
    sampled until the translated occluder covers a fraction of the
    occludee's modal area inside ``[overlap_min, overlap_max]``.
    """
    if not 0 < overlap_min < overlap_max < 1:
        raise ValueError("need 0 < overlap_min < overlap_max < 1")
    donors = scene.instances if occluder_scene is None else occluder_scene.instances
    if occluder_scene is None and len(scene.instances) < 2:
        raise SamplingExhausted(f"{scene.scene_id}: fewer than two instances")
    if occluder_scene is not None and occluder_scene.shape != scene.shape:
        raise ValueError("cross-scene occluder must come from a same-sized scene")
    if not scene.instances or not donors:
        raise SamplingExhausted(f"{scene.scene_id}: no instances to sample")

    for _ in range(max_retries):
        occludee = scene.instances[rng.integers(len(scene.instances))]
        occluder = donors[rng.integers(len(donors))]
        if occluder is occludee:
            continue
        # line up a random occluder pixel with a random occludee pixel
        ee = np.argwhere(occludee.modal_mask)
        er = np.argwhere(occluder.modal_mask)
        p = ee[rng.integers(len(ee))]
        q = er[rng.integers(len(er))]
        offset = (int(p[0] - q[0]), int(p[1] - q[1]))
        pair = OcclusionPair(occludee, occluder, offset)
        frac = pair.overlap_fraction()
        if overlap_min <= frac <= overlap_max:
            return pair
    raise SamplingExhausted(
        f"{scene.scene_id}: no placement within overlap "
        f"[{overlap_min}, {overlap_max}] after {max_retries} tries"
    )


def _box_blur(x: np.ndarray, radius: int) -> np.ndarray:
    size = [2 * radius + 1] * 2 + [1] * (x.ndim - 2)
    return ndimage.uniform_filter(x, size=size, mode="constant", cval=0.0)


def composite(
    image: np.ndarray,
    occluder_patch: np.ndarray,
    occluder_mask: np.ndarray,
    offset: Sequence[int],
    feather_radius: int = DEFAULT_FEATHER,
) -> np.ndarray:
    """Paste an occluder onto ``image`` with a box-blur feathered alpha.

    ``occluder_patch`` is the RGB block under the bounding box of
    ``occluder_mask`` (both at the occluder's original position); the
    pasted copy is moved by ``offset = (dy, dx)`` and clipped at the image
    border. Returns a float64 image in the input's intensity scale.
    """
    image = np.asarray(image, dtype=np.float64)
    occluder_mask = M.as_mask(occluder_mask)
    h, w = occluder_mask.shape
    if image.shape[:2] != (h, w):
        raise ValueError("image and occluder mask sizes differ")
    dy, dx = (int(v) for v in offset)
    r0, r1, c0, c1 = M.bbox(occluder_mask)

    layer = np.zeros_like(image)
    tr0, tc0 = r0 + dy, c0 + dx
    rs = slice(max(tr0, 0), min(tr0 + (r1 - r0), h))
    cs = slice(max(tc0, 0), min(tc0 + (c1 - c0), w))
    if rs.start < rs.stop and cs.start < cs.stop:
        layer[rs, cs] = np.asarray(occluder_patch, dtype=np.float64)[
            rs.start - tr0 : rs.stop - tr0, cs.start - tc0 : cs.stop - tc0
        ]
    pasted = M.translate(occluder_mask, (dy, dx))

    if feather_radius <= 0:
        alpha = pasted.astype(np.float64)
        colors = layer
    else:
        alpha = _box_blur(pasted.astype(np.float64), feather_radius)
        # outside the mask, extend the occluder colour by its local mean
        spread = _box_blur(layer * pasted[..., None], feather_radius)
        with np.errstate(invalid="ignore", divide="ignore"):
            spread = np.where(alpha[..., None] > 0, spread / alpha[..., None], 0.0)
        colors = np.where(pasted[..., None], layer, spread)
    a = alpha[..., None]
    return a * colors + (1.0 - a) * image


def build_triplet(
    scene: Scene,
    pair: OcclusionPair,
    set_tag: SetTag,
    boundary_radius: int = M.DEFAULT_RADIUS,
    feather_radius: int = DEFAULT_FEATHER,
) -> TrainingTriplet:
    set_tag = SetTag(set_tag)
    occluder_mask = pair.occluder_mask
    occludee_mask = pair.occludee.modal_mask
    image = composite(
        scene.image,
        pair.occluder.image_patch,
        pair.occluder.modal_mask,
        pair.offset,
        feather_radius,
    )
    remaining = occludee_mask & ~occluder_mask
    # contact band between the two visible masks after pasting; using the
    # full occludee here would outline the hidden region itself
    boundary = M.occlusion_boundary(remaining, occluder_mask, boundary_radius)
    if set_tag is SetTag.SET1:
        input_mask, target, weight = remaining, occludee_mask.copy(), occluder_mask
    else:
        input_mask, target, weight = occluder_mask, occluder_mask.copy(), remaining
    return TrainingTriplet(
        image=(image / 255.0).astype(np.float32),
        boundary=boundary,
        input_mask=input_mask,
        target_mask=target,
        weight_region=weight,
        set_tag=set_tag,
    )


# -- synthetic shape scenes -------------------------------------------------

SHAPE_KINDS = ("rectangle", "ellipse", "triangle")


@dataclass
class Shape:
    kind: str
    params: Tuple[float, ...]
    color: Tuple[int, int, int]
    category_id: int = 0

    def rasterize(self, height: int, width: int) -> np.ndarray:
        rr, cc = np.mgrid[0:height, 0:width]
        if self.kind == "rectangle":
            r0, c0, r1, c1 = self.params
            return (rr >= r0) & (rr < r1) & (cc >= c0) & (cc < c1)
        if self.kind == "ellipse":
            cy, cx, ry, rx = self.params
            return ((rr - cy) / ry) ** 2 + ((cc - cx) / rx) ** 2 <= 1.0
        if self.kind == "triangle":
            pts = np.asarray(self.params, dtype=np.float64).reshape(3, 2)
            y, x = rr + 0.5, cc + 0.5
            signs = []
            for i in range(3):
                (ay, ax), (by, bx) = pts[i], pts[(i + 1) % 3]
                signs.append((bx - ax) * (y - ay) - (by - ay) * (x - ax))
            s = np.stack(signs)
            return (s >= 0).all(axis=0) | (s <= 0).all(axis=0)
        raise ValueError(f"unknown shape kind {self.kind!r}")


@dataclass
class SyntheticConfig:
    canvas: int = 64
    min_shapes: int = 2
    max_shapes: int = 6
    # shape extent as a fraction of the canvas side
    size_range: Tuple[float, float] = (0.25, 0.5)
    kinds: Tuple[str, ...] = SHAPE_KINDS
    noise: float = 4.0

    def __post_init__(self):
        if self.canvas < 32:
            raise ValueError("canvas must be at least 32x32")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 1 <= min_shapes <= max_shapes")


def scene_from_shapes(
    shapes: Sequence[Shape],
    canvas: int,
    background=(128, 128, 128),
    scene_id: str = "scene",
    noise: Optional[np.ndarray] = None,
) -> Scene:
    """Paint ``shapes`` bottom-to-top and record exact modal/amodal masks.

    Shapes whose visible part ends up empty are dropped.
    """
    h = w = canvas
    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = background
    amodal = [s.rasterize(h, w) for s in shapes]
    for s, m in zip(shapes, amodal):
        image[m] = s.color
    if noise is not None:
        image = image + noise
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    n = len(shapes)
    instances = []
    covered = np.zeros((h, w), dtype=bool)
    # walk front to back so each modal mask is its shape minus everything above
    for idx in range(n - 1, -1, -1):
        modal = amodal[idx] & ~covered
        covered |= amodal[idx]
        if not modal.any():
            continue
        instances.append(
            SceneInstance(
                instance_id=idx + 1,
                category_id=shapes[idx].category_id,
                modal_mask=modal,
                amodal_mask=amodal[idx],
                depth=n - 1 - idx,
            )
        )
    instances.sort(key=lambda inst: inst.instance_id)
    return Scene(image=image, instances=instances, scene_id=scene_id)


def _random_shape(rng: np.random.Generator, cfg: SyntheticConfig) -> Shape:
    c = cfg.canvas
    lo, hi = cfg.size_range
    kind = cfg.kinds[rng.integers(len(cfg.kinds))]
    sh, sw = rng.uniform(lo, hi, size=2) * c
    cy, cx = rng.uniform(0.15 * c, 0.85 * c, size=2)
    color = tuple(int(v) for v in rng.integers(0, 256, size=3))
    if kind == "rectangle":
        params = (
            round(cy - sh / 2), round(cx - sw / 2), round(cy + sh / 2), round(cx + sw / 2)
        )
    elif kind == "ellipse":
        params = (cy, cx, sh / 2, sw / 2)
    else:
        pts = []
        for k in range(3):
            ang = rng.uniform(0, 2 * np.pi / 3) + k * 2 * np.pi / 3
            pts += [cy + np.sin(ang) * sh / 2 * 1.2, cx + np.cos(ang) * sw / 2 * 1.2]
        params = tuple(pts)
    return Shape(kind, params, color, SHAPE_KINDS.index(kind) + 1)


def generate_synthetic_scene(
    rng: np.random.Generator,
    config: Optional[SyntheticConfig] = None,
    scene_id: str = "scene",
    n_shapes: Optional[int] = None,
) -> Scene:
    """Random stack of solid shapes with exact modal and amodal masks."""
    cfg = config or SyntheticConfig()
    if n_shapes is None:
        n_shapes = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    background = tuple(int(v) for v in rng.integers(0, 256, size=3))
    shapes = []
    while len(shapes) < n_shapes:
        s = _random_shape(rng, cfg)
        if not s.rasterize(cfg.canvas, cfg.canvas).any():
            continue
        # keep shapes distinguishable from the background
        if np.abs(np.subtract(s.color, background)).sum() < 60:
            continue
        shapes.append(s)
    noise = rng.normal(0.0, cfg.noise, size=(cfg.canvas, cfg.canvas, 3)) if cfg.noise else None
    return scene_from_shapes(shapes, cfg.canvas, background, scene_id, noise)


def generate_dataset(
    n_scenes: int, seed: int, config: Optional[SyntheticConfig] = None, prefix: str = "scene"
) -> List[Scene]:
    """``n_scenes`` synthetic scenes, each from its own child seed."""
    children = np.random.SeedSequence(seed).spawn(n_scenes)
    return [
        generate_synthetic_scene(np.random.default_rng(ss), config, f"{prefix}_{i:05d}")
        for i, ss in enumerate(children)
    ]


# -- dataset directory I/O ---------------------------------------------------


def save_dataset(scenes: Sequence[Scene], path) -> None:
    """Write ``images/<id>.png`` plus ``annotations.json`` under ``path``."""
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    records = []
    for scene in scenes:
        rel = f"images/{scene.scene_id}.png"
        Image.fromarray(np.asarray(scene.image, dtype=np.uint8), "RGB").save(
            os.path.join(path, rel)
        )
        insts = []
        for inst in scene.instances:
            rec = {
                "instance_id": int(inst.instance_id),
                "category_id": int(inst.category_id),
                "modal_rle": M.rle_encode(inst.modal_mask).to_json(),
                "amodal_rle": None
                if inst.amodal_mask is None
                else M.rle_encode(inst.amodal_mask).to_json(),
            }
            if inst.depth is not None:
                rec["depth"] = int(inst.depth)
            insts.append(rec)
        records.append({"scene_id": scene.scene_id, "image": rel, "instances": insts})
    with open(os.path.join(path, "annotations.json"), "w") as f:
        json.dump({"scenes": records}, f)


def _decode(rle_obj, shape, what: str, inst_id) -> np.ndarray:
    try:
        rle = M.RleMask.from_json(rle_obj)
        mask = M.rle_decode(rle)
    except M.RleError as exc:
        raise MalformedAnnotation(f"instance {inst_id}: bad {what}: {exc}") from exc
    if mask.shape != shape:
        raise MalformedAnnotation(
            f"instance {inst_id}: {what} size {mask.shape} does not match image {shape}"
        )
    return mask


def _load_scene(root: str, rec: dict) -> Scene:
    try:
        scene_id = str(rec["scene_id"])
        image_path = os.path.join(root, rec["image"])
        inst_recs = rec["instances"]
    except (KeyError, TypeError) as exc:
        raise MalformedAnnotation(f"scene record missing field: {exc}") from exc
    if not os.path.isfile(image_path):
        raise MissingImage(f"{scene_id}: image not found at {image_path}")
    with Image.open(image_path) as im:
        image = np.asarray(im.convert("RGB"))
    shape = image.shape[:2]
    instances = []
    for ir in inst_recs:
        inst_id = ir.get("instance_id")
        try:
            modal = _decode(ir["modal_rle"], shape, "modal_rle", inst_id)
            amodal = None
            if ir.get("amodal_rle") is not None:
                amodal = _decode(ir["amodal_rle"], shape, "amodal_rle", inst_id)
            instances.append(
                SceneInstance(
                    instance_id=int(inst_id),
                    category_id=int(ir["category_id"]),
                    modal_mask=modal,
                    amodal_mask=amodal,
                    depth=ir.get("depth"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedAnnotation(f"{scene_id}: instance {inst_id}: {exc}") from exc
    return Scene(image=image, instances=instances, scene_id=scene_id)


def load_modal_dataset(path, strict: bool = False, errors: Optional[list] = None) -> List[Scene]:
    """Load a dataset directory written by :func:`save_dataset`.

    A scene that fails to load is logged, appended to ``errors`` as
    ``(scene_id, exception)`` and skipped; with ``strict=True`` the first
    failure is raised instead.
    """
    ann_path = os.path.join(path, "annotations.json")
    try:
        with open(ann_path) as f:
            data = json.load(f)
        records = data["scenes"]
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedAnnotation(f"{ann_path}: {exc}") from exc

    scenes = []
    for rec in records:
        try:
            scenes.append(_load_scene(path, rec))
        except DatasetError as exc:
            if strict:
                raise
            sid = rec.get("scene_id") if isinstance(rec, dict) else None
            log.warning("skipping scene %s: %s", sid, exc)
            if errors is not None:
                errors.append((sid, exc))
    return scenes


def save_triplet(triplet: TrainingTriplet, path, name: str) -> None:
    """Cache one triplet as ``<name>.png`` plus ``<name>.json`` (RLE masks)."""
    os.makedirs(path, exist_ok=True)
    img = np.clip(np.rint(triplet.image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, "RGB").save(os.path.join(path, f"{name}.png"))
    rec = {
        "image": f"{name}.png",
        "set_tag": SetTag(triplet.set_tag).value,
        "boundary": M.rle_encode(triplet.boundary).to_json(),
        "input_mask": M.rle_encode(triplet.input_mask).to_json(),
        "target_mask": M.rle_encode(triplet.target_mask).to_json(),
        "weight_region": M.rle_encode(triplet.weight_region).to_json(),
    }
    with open(os.path.join(path, f"{name}.json"), "w") as f:
        json.dump(rec, f)


def load_triplet(path, name: str) -> TrainingTriplet:
    with open(os.path.join(path, f"{name}.json")) as f:
        rec = json.load(f)
    with Image.open(os.path.join(path, rec["image"])) as im:
        image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    dec = {k: M.rle_decode(M.RleMask.from_json(rec[k]))
           for k in ("boundary", "input_mask", "target_mask", "weight_region")}
    return TrainingTriplet(image=image, set_tag=SetTag(rec["set_tag"]), **dec)

"""Amodal completion at inference time, ordering recovery and metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import masks as M
from .model import ModelOutput
from .synth import Scene, SceneInstance, save_dataset

DEFAULT_THRESHOLD = 0.5


class MissingAmodalGT(ValueError):
    pass


@dataclass
class InstancePrediction:
    instance_id: int
    modal_mask: np.ndarray
    amodal_mask: np.ndarray
    uncertainty_map: Optional[np.ndarray] = None
    boundary: Optional[np.ndarray] = None

    def __post_init__(self):
        # completion never removes visible pixels
        self.amodal_mask = M.as_mask(self.amodal_mask) | M.as_mask(self.modal_mask)

    @property
    def extension(self) -> np.ndarray:
        return self.amodal_mask & ~self.modal_mask

    @property
    def extension_area(self) -> int:
        return int(np.count_nonzero(self.extension))


@dataclass
class MetricsReport:
    mIoU: float
    inv_mIoU: float
    o_acc: float
    n_instances: int
    n_pairs: int
    n_occluded: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


class NoExtensionModel:
    """Baseline that never completes anything: amodal = modal."""

    def predict(self, image, input_mask, boundary) -> ModelOutput:
        shape = np.asarray(input_mask).shape
        return ModelOutput(np.zeros(shape, np.float32), np.ones(shape, np.float32))


def inference_boundary(scene: Scene, j: int, radius: int = M.DEFAULT_RADIUS) -> np.ndarray:
    """Union of contact bands between instance ``j`` and every adjacent instance."""
    mj = scene.instances[j].modal_mask
    out = np.zeros_like(mj)
    for k, other in enumerate(scene.instances):
        if k != j:
            out |= M.occlusion_boundary(mj, other.modal_mask, radius)
    return out


def complete_instance(
    model,
    scene: Scene,
    j: int,
    threshold: float = DEFAULT_THRESHOLD,
    boundary_radius: int = M.DEFAULT_RADIUS,
) -> InstancePrediction:
    inst = scene.instances[j]
    boundary = inference_boundary(scene, j, boundary_radius)
    out = model.predict(scene.image, inst.modal_mask, boundary)
    return InstancePrediction(
        instance_id=inst.instance_id,
        modal_mask=inst.modal_mask,
        amodal_mask=np.asarray(out.mask_prob) >= threshold,
        uncertainty_map=np.asarray(out.uncertainty),
        boundary=boundary,
    )


def complete_scene(model, scene: Scene, threshold=DEFAULT_THRESHOLD,
                   boundary_radius=M.DEFAULT_RADIUS) -> List[InstancePrediction]:
    return [
        complete_instance(model, scene, j, threshold, boundary_radius)
        for j in range(len(scene.instances))
    ]


def order_from_extensions(ext_j: int, ext_k: int) -> int:
    """1 if j occludes k, -1 otherwise, 0 when neither was extended.

    Ties between equal non-zero extensions fall to -1.
    """
    if ext_j == 0 and ext_k == 0:
        return 0
    if ext_j < ext_k:
        return 1
    return -1


def pairwise_extensions(pred_j: InstancePrediction, pred_k: InstancePrediction):
    """Extension areas of j into k's visible region and of k into j's."""
    ext_j = int(np.count_nonzero(pred_j.extension & pred_k.modal_mask))
    ext_k = int(np.count_nonzero(pred_k.extension & pred_j.modal_mask))
    return ext_j, ext_k


def recover_order(
    pred_j: InstancePrediction,
    pred_k: InstancePrediction,
    is_adjacent: bool,
    pairwise: bool = True,
) -> int:
    """Ordering relation of two instances from their completions.

    With ``pairwise=True`` (default) only the part of each extension that
    reaches into the other instance's visible region is compared; with
    ``pairwise=False`` the total extension areas are compared.
    """
    if not is_adjacent:
        return 0
    if pairwise:
        return order_from_extensions(*pairwise_extensions(pred_j, pred_k))
    return order_from_extensions(pred_j.extension_area, pred_k.extension_area)


def gt_prediction(inst: SceneInstance) -> InstancePrediction:
    if inst.amodal_mask is None:
        raise MissingAmodalGT(f"instance {inst.instance_id} has no amodal ground truth")
    return InstancePrediction(inst.instance_id, inst.modal_mask, inst.amodal_mask)


def depth_order(inst_j: SceneInstance, inst_k: SceneInstance, is_adjacent: bool) -> int:
    """Ground-truth relation from the known depth order of a synthetic scene.

    j occludes k when j is in front and some visible pixel of j lies on
    k's full extent.
    """
    if not is_adjacent:
        return 0
    if inst_j.depth is None or inst_k.depth is None:
        raise ValueError("depth order unknown for this scene")
    if inst_j.depth < inst_k.depth and (inst_j.modal_mask & inst_k.amodal_mask).any():
        return 1
    if inst_k.depth < inst_j.depth and (inst_k.modal_mask & inst_j.amodal_mask).any():
        return -1
    return 0


def compute_metrics(
    predictions: Sequence[Sequence[InstancePrediction]],
    gt_scenes: Sequence[Scene],
    boundary_radius: int = M.DEFAULT_RADIUS,
    pairwise: bool = True,
) -> MetricsReport:
    """Amodal mIoU, invisible-region mIoU and pairwise ordering accuracy.

    ``predictions[s]`` holds the predictions for ``gt_scenes[s]``, matched
    by instance id. inv-mIoU averages only over instances with a non-empty
    ground-truth invisible region. Empty averages are reported as 1.0.
    """
    if len(predictions) != len(gt_scenes):
        raise ValueError("one prediction list per scene required")
    ious, inv_ious = [], []
    n_pairs = matches = 0
    for preds, scene in zip(predictions, gt_scenes):
        by_id = {p.instance_id: p for p in preds}
        gts = [gt_prediction(inst) for inst in scene.instances]
        scene_preds = []
        for gt in gts:
            try:
                pred = by_id[gt.instance_id]
            except KeyError:
                raise ValueError(
                    f"{scene.scene_id}: no prediction for instance {gt.instance_id}"
                ) from None
            scene_preds.append(pred)
            ious.append(M.iou(pred.amodal_mask, gt.amodal_mask))
            if gt.extension.any():
                inv_ious.append(M.iou(pred.extension, gt.extension))
        for j in range(len(gts)):
            for k in range(j + 1, len(gts)):
                if not M.adjacent(gts[j].modal_mask, gts[k].modal_mask, boundary_radius):
                    continue
                n_pairs += 1
                o_pred = recover_order(scene_preds[j], scene_preds[k], True, pairwise)
                o_gt = recover_order(gts[j], gts[k], True, pairwise)
                matches += o_pred == o_gt
    return MetricsReport(
        mIoU=float(np.mean(ious)) if ious else 1.0,
        inv_mIoU=float(np.mean(inv_ious)) if inv_ious else 1.0,
        o_acc=matches / n_pairs if n_pairs else 1.0,
        n_instances=len(ious),
        n_pairs=n_pairs,
        n_occluded=len(inv_ious),
    )


def evaluate(model, scenes: Sequence[Scene], threshold=DEFAULT_THRESHOLD,
             boundary_radius=M.DEFAULT_RADIUS, pairwise=True):
    """Complete every instance of every scene and score the result."""
    preds = [complete_scene(model, s, threshold, boundary_radius) for s in scenes]
    return compute_metrics(preds, scenes, boundary_radius, pairwise), preds


def uncertainty_localization(predictions, near: int = 3, far: int = 6):
    """Mean uncertainty near the occlusion boundary vs deep inside the mask.

    Returns ``(near_mean, interior_mean)`` pooled over all pixels within
    Chebyshev distance ``near`` of each instance's boundary and over the
    modal-mask pixels farther than ``far`` from it.
    """
    near_sum = near_n = far_sum = far_n = 0.0
    for preds in predictions:
        for p in preds:
            if p.uncertainty_map is None or p.boundary is None or not p.boundary.any():
                continue
            band = M.dilate(p.boundary, near)
            interior = p.modal_mask & ~M.dilate(p.boundary, far)
            near_sum += float(p.uncertainty_map[band].sum())
            near_n += int(band.sum())
            far_sum += float(p.uncertainty_map[interior].sum())
            far_n += int(interior.sum())
    return (near_sum / near_n if near_n else float("nan"),
            far_sum / far_n if far_n else float("nan"))


def export_pseudo_gt(model, scenes: Sequence[Scene], path, threshold=DEFAULT_THRESHOLD,
                     boundary_radius=M.DEFAULT_RADIUS) -> List[Scene]:
    """Write completed masks as amodal annotations in the dataset layout."""
    out = []
    for scene in scenes:
        preds = complete_scene(model, scene, threshold, boundary_radius)
        instances = [
            SceneInstance(
                instance_id=inst.instance_id,
                category_id=inst.category_id,
                modal_mask=inst.modal_mask,
                amodal_mask=pred.amodal_mask,
            )
            for inst, pred in zip(scene.instances, preds)
        ]
        out.append(Scene(image=scene.image, instances=instances, scene_id=scene.scene_id))
    save_dataset(out, path)
    return out

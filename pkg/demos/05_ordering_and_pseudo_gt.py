"""
Occlusion order and pseudo ground truth
=======================================

Whichever of two touching objects gets extended into the other's visible
area is the one behind. With perfect completions this recovers the true
order; with a trained model it is an estimate. Completed masks can also
be written back out as an annotation set. A checkpoint from the training
demo is used when present, otherwise the never-extend baseline.
"""
import os

from amodal import evaluate as E
from amodal import masks as M
from amodal import synth as S
from amodal.model import load_checkpoint
from amodal.render import render

scene = S.generate_dataset(1, seed=11, prefix="demo")[0]
insts = scene.instances
for j in range(len(insts)):
    for k in range(j + 1, len(insts)):
        adj = M.adjacent(insts[j].modal_mask, insts[k].modal_mask)
        if adj:
            got = E.recover_order(E.gt_prediction(insts[j]), E.gt_prediction(insts[k]), adj)
            print(f"{insts[j].instance_id} vs {insts[k].instance_id}: recovered {got:+d}, "
                  f"depth says {E.depth_order(insts[j], insts[k], adj):+d}")

ckpt = os.path.join("demo_out", "run", "checkpoint.bin")
model = load_checkpoint(ckpt) if os.path.exists(ckpt) else E.NoExtensionModel()
print("model:", ckpt if os.path.exists(ckpt) else "no-extension baseline")

scenes = S.generate_dataset(5, seed=2, prefix="test")
exported = E.export_pseudo_gt(model, scenes, os.path.join("demo_out", "pseudo_gt"))
print("exported", sum(len(s.instances) for s in exported), "completed instances")

files = []
for pred in E.complete_scene(model, scenes[0]):
    files += render(scenes[0], pred, os.path.join("demo_out", "panels"))
print("wrote", len(files), "panels, e.g.", os.path.basename(files[0]))

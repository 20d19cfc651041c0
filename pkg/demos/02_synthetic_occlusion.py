"""
Making training data by pasting one object over another
=======================================================

A modal-only scene of random shapes is turned into the two kinds of
training example: SET1 asks the network to restore the hidden part of an
object that was just covered, SET2 asks it to leave an object that is
already whole alone. Panels are written to ``demo_out/synth``.
"""
import os

import numpy as np
from PIL import Image

from amodal import synth as S
from amodal.render import mask_image

out = os.path.join("demo_out", "synth")
os.makedirs(out, exist_ok=True)

rng = np.random.default_rng(3)
scene = S.generate_synthetic_scene(rng, S.SyntheticConfig(canvas=64), scene_id="demo", n_shapes=4)
print(f"{len(scene.instances)} instances in scene {scene.scene_id}")

# an occluder is placed so that it hides between 10% and 70% of the occludee
pair = S.sample_occlusion_pair(scene, rng)
print("occludee", pair.occludee.instance_id, "occluder", pair.occluder.instance_id,
      "offset", pair.offset, f"hidden {pair.overlap_fraction():.2f}")

for tag in S.SetTag:
    t = S.build_triplet(scene, pair, tag)
    print(f"{tag.value}: input {t.input_mask.sum()} px, target {t.target_mask.sum()} px, "
          f"weighted {t.weight_region.sum()} px, band {t.boundary.sum()} px")
    Image.fromarray((t.image * 255).round().astype(np.uint8)).save(
        os.path.join(out, f"{tag.value}_image.png"))
    for name in ("input_mask", "target_mask", "weight_region", "boundary"):
        mask_image(getattr(t, name)).save(os.path.join(out, f"{tag.value}_{name}.png"))

# pasted images are alpha-matted: around the occluder's rim the pixels are a
# blend of both objects instead of a hard cut
hard = S.build_triplet(scene, pair, S.SetTag.SET1, feather_radius=0).image
soft = S.build_triplet(scene, pair, S.SetTag.SET1, feather_radius=2).image
print("pixels changed by feathering:", int((np.abs(hard - soft) > 1e-6).any(axis=2).sum()))

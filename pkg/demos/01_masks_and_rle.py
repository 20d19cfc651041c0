"""
Masks, contact bands and run-length encoding
============================================

Two overlapping squares on a 12x12 grid, the band where they touch, and
the COCO-style column-major RLE that annotations are stored in.
"""
import numpy as np

from amodal import masks as M

front = np.zeros((12, 12), bool)
front[2:7, 2:7] = True
back = np.zeros((12, 12), bool)
back[5:10, 4:10] = True
# the back square only shows where the front one is absent
visible_back = back & ~front

# dilate both visible masks by one pixel (3x3 square) and intersect
band = M.occlusion_boundary(front, visible_back, radius=1)
print("contact band:")
print(band.astype(int))
print("adjacent:", M.adjacent(front, visible_back))

print("IoU(visible, full):", round(M.iou(visible_back, back), 3))
print("IoU of two empty masks:", M.iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)))

# runs alternate zeros and ones down the columns, starting with zeros
rle = M.rle_encode(visible_back)
print("rle:", rle.to_json())
assert np.array_equal(M.rle_decode(rle), visible_back)

"""Naive reference implementations used as independent test oracles."""
import math

import numpy as np


def dilate_naive(mask, radius):
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            for rr in range(max(0, r - radius), min(h, r + radius + 1)):
                for cc in range(max(0, c - radius), min(w, c + radius + 1)):
                    if mask[rr, cc]:
                        out[r, c] = True
    return out


def boundary_naive(a, b, radius):
    da, db = dilate_naive(a, radius), dilate_naive(b, radius)
    h, w = a.shape
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            out[r, c] = bool(da[r, c] and db[r, c])
    return out


def iou_naive(a, b):
    inter = union = 0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            inter += bool(a[r, c]) and bool(b[r, c])
            union += bool(a[r, c]) or bool(b[r, c])
    return 1.0 if union == 0 else inter / union


def count(mask):
    n = 0
    for r in range(mask.shape[0]):
        for c in range(mask.shape[1]):
            n += bool(mask[r, c])
    return n


def and_not(a, b):
    h, w = a.shape
    return np.array([[bool(a[r, c]) and not b[r, c] for c in range(w)] for r in range(h)])


def and_(a, b):
    h, w = a.shape
    return np.array([[bool(a[r, c]) and bool(b[r, c]) for c in range(w)] for r in range(h)])


def order_naive(ext_j, ext_k):
    if ext_j == 0 and ext_k == 0:
        return 0
    return 1 if ext_j < ext_k else -1


def metrics_naive(pred_amodal, modal, gt_amodal, radius):
    """Metrics of one scene from lists of masks, by explicit cell counting.

    Returns ``(ious, inv_ious, n_pairs, matches)``.
    """
    n = len(modal)
    pred = [np.array([[bool(p[r, c]) or bool(m[r, c]) for c in range(m.shape[1])]
                      for r in range(m.shape[0])]) for p, m in zip(pred_amodal, modal)]
    ious, inv = [], []
    for i in range(n):
        ious.append(iou_naive(pred[i], gt_amodal[i]))
        gt_inv = and_not(gt_amodal[i], modal[i])
        if count(gt_inv):
            inv.append(iou_naive(and_not(pred[i], modal[i]), gt_inv))
    pairs = matches = 0
    for j in range(n):
        for k in range(j + 1, n):
            if not count(boundary_naive(modal[j], modal[k], radius)):
                continue
            pairs += 1
            o_pred = order_naive(count(and_(and_not(pred[j], modal[j]), modal[k])),
                                 count(and_(and_not(pred[k], modal[k]), modal[j])))
            o_gt = order_naive(count(and_(and_not(gt_amodal[j], modal[j]), modal[k])),
                               count(and_(and_not(gt_amodal[k], modal[k]), modal[j])))
            matches += o_pred == o_gt
    return ious, inv, pairs, matches


# -- scalar per-pixel loss references ------------------------------------------


def asbu_pixel(m, u, t, in_region=False, lam=5.0):
    w = lam if in_region else 1.0
    return w * 0.5 * (((t - m) / u) ** 2 + u * u)


def gaussian_pixel(m, u, t):
    return 0.5 * ((t - m) ** 2 / (u * u) + math.log(u * u))


def ubce_pixel(m, u, t):
    b = -(t * math.log(m) + (1 - t) * math.log(1 - m))
    return 0.5 * (b / (u * u) + u * u)

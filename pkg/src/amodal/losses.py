"""Uncertainty-weighted segmentation losses.

All losses take a predicted probability map ``m`` (sigmoid output), a
positive uncertainty map ``u`` (softplus output) and a binary target, and
reduce by the mean over every pixel (equivalently: mean over pixels, then
over the batch, since all images in a batch share a size).

Per-pixel terms, with residual ``r = target - m``:

* ``asbu``:      0.5 * ((r / u)**2 + u**2)
* ``gaussian``:  0.5 * (r**2 / u**2 + log(u**2))
* ``ubce``:      0.5 * (bce(m, target) / u**2 + u**2)
* ``bce``:       bce(m, target)

When a ``weight_region`` mask is supplied, pixels inside it are weighted
by ``lambda_weight`` and all others by 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable

import numpy as np
import torch


@dataclass(frozen=True)
class LossConfig:
    lambda_weight: float = 5.0
    epsilon_u: float = 1e-6
    epsilon_p: float = 1e-7

    def __post_init__(self):
        if self.lambda_weight <= 0:
            raise ValueError("lambda_weight must be positive")
        if self.epsilon_u <= 0 or self.epsilon_p <= 0:
            raise ValueError("epsilons must be positive")


DEFAULT_CONFIG = LossConfig()


def _t(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _check_shapes(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t is not None and t.shape != shape:
            raise ValueError(f"loss input shapes differ: {tuple(shape)} vs {tuple(t.shape)}")


def _region_weights(weight_region, like, lambda_weight):
    if weight_region is None:
        return None
    region = _t(weight_region, like).to(like.dtype)
    return 1.0 + (lambda_weight - 1.0) * region


def _reduce(per_pixel, weights):
    if weights is not None:
        per_pixel = per_pixel * weights
    return per_pixel.mean()


def _bce_terms(m, target, eps):
    m = m.clamp(eps, 1.0 - eps)
    return -(target * torch.log(m) + (1.0 - target) * torch.log1p(-m))


def asbu_loss(m, u, target, weight_region=None, config: LossConfig = DEFAULT_CONFIG):
    """Uncertainty-weighted squared error with a ``u**2`` regulariser."""
    m = _t(m)
    u, target = _t(u, m), _t(target, m).to(m.dtype)
    _check_shapes(m, u, target)
    u = u.clamp_min(config.epsilon_u)
    per_pixel = 0.5 * (((target - m) / u) ** 2 + u**2)
    return _reduce(per_pixel, _region_weights(weight_region, m, config.lambda_weight))


def gaussian_uncertainty_loss(
    m, u, target, weight_region=None, config: LossConfig = DEFAULT_CONFIG
):
    """Heteroscedastic Gaussian negative log-likelihood (up to a constant)."""
    m = _t(m)
    u, target = _t(u, m), _t(target, m).to(m.dtype)
    _check_shapes(m, u, target)
    u = u.clamp_min(config.epsilon_u)
    per_pixel = 0.5 * ((target - m) ** 2 / u**2 + torch.log(u**2))
    return _reduce(per_pixel, _region_weights(weight_region, m, config.lambda_weight))


def ubce_loss(m, u, target, weight_region=None, config: LossConfig = DEFAULT_CONFIG):
    """Binary cross-entropy scaled by ``1 / u**2`` plus a ``u**2`` regulariser."""
    m = _t(m)
    u, target = _t(u, m), _t(target, m).to(m.dtype)
    _check_shapes(m, u, target)
    u = u.clamp_min(config.epsilon_u)
    b = _bce_terms(m, target, config.epsilon_p)
    per_pixel = 0.5 * (b / u**2 + u**2)
    return _reduce(per_pixel, _region_weights(weight_region, m, config.lambda_weight))


def bce_loss(m, target, weight_region=None, config: LossConfig = DEFAULT_CONFIG):
    m = _t(m)
    target = _t(target, m).to(m.dtype)
    _check_shapes(m, target)
    per_pixel = _bce_terms(m, target, config.epsilon_p)
    return _reduce(per_pixel, _region_weights(weight_region, m, config.lambda_weight))


LOSSES = {
    "asbu": asbu_loss,
    "gaussian": gaussian_uncertainty_loss,
    "ubce": ubce_loss,
    "bce": bce_loss,
}


def compute_loss(kind: str, m, u, target, weight_region=None, config=DEFAULT_CONFIG):
    """Dispatch by name; ``bce`` ignores the uncertainty map."""
    kind = kind.lower()
    if kind == "bce":
        return bce_loss(m, target, weight_region, config)
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}") from None
    return fn(m, u, target, weight_region, config)


# -- closed-form gradients (numpy, float64) -----------------------------------


def _np_weights(weight_region, shape, lambda_weight):
    if weight_region is None:
        return np.ones(shape)
    return 1.0 + (lambda_weight - 1.0) * np.asarray(weight_region, dtype=np.float64)


def asbu_grad(m, u, target, weight_region=None, config: LossConfig = DEFAULT_CONFIG):
    """Gradient of :func:`asbu_loss` with respect to ``(m, u)``.

    Assumes ``u`` lies above the clamp floor.
    """
    m, u, t = (np.asarray(a, dtype=np.float64) for a in (m, u, target))
    scale = _np_weights(weight_region, m.shape, config.lambda_weight) / m.size
    r = t - m
    return scale * (-r / u**2), scale * (-(r**2) / u**3 + u)


def gaussian_grad(m, u, target, weight_region=None, config: LossConfig = DEFAULT_CONFIG):
    m, u, t = (np.asarray(a, dtype=np.float64) for a in (m, u, target))
    scale = _np_weights(weight_region, m.shape, config.lambda_weight) / m.size
    r = t - m
    return scale * (-r / u**2), scale * (-(r**2) / u**3 + 1.0 / u)


def ubce_grad(m, u, target, weight_region=None, config: LossConfig = DEFAULT_CONFIG):
    """Assumes ``m`` lies strictly inside the probability clamp."""
    m, u, t = (np.asarray(a, dtype=np.float64) for a in (m, u, target))
    scale = _np_weights(weight_region, m.shape, config.lambda_weight) / m.size
    b = -(t * np.log(m) + (1.0 - t) * np.log1p(-m))
    db_dm = -t / m + (1.0 - t) / (1.0 - m)
    return scale * db_dm / (2.0 * u**2), scale * (-b / u**3 + u)


def autograd_grad(loss_fn: Callable, m, u, target, weight_region=None, **kwargs):
    """Gradient of ``loss_fn`` w.r.t. ``(m, u)`` via torch autograd (float64)."""
    mt = torch.tensor(np.asarray(m, dtype=np.float64), requires_grad=True)
    ut = torch.tensor(np.asarray(u, dtype=np.float64), requires_grad=True)
    loss = loss_fn(mt, ut, target, weight_region, **kwargs)
    loss.backward()
    return mt.grad.numpy(), ut.grad.numpy()


def finite_difference_grad(
    loss_fn: Callable,
    inputs: Dict[str, np.ndarray],
    step: float = 1e-4,
    wrt: Iterable[str] = ("m", "u"),
) -> Dict[str, np.ndarray]:
    """Central-difference gradient of a scalar loss.

    ``loss_fn`` is called as ``loss_fn(**inputs)`` and must return a scalar
    (python float or 0-d tensor). Every element of each array named in
    ``wrt`` is perturbed by ``+/- step`` in turn.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {k: None if v is None else np.array(v, dtype=np.float64) for k, v in inputs.items()}
    grads = {}
    for name in wrt:
        x = base[name]
        g = np.empty_like(x)
        flat, gflat = x.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn(**base))
            flat[i] = orig - step
            lo = float(loss_fn(**base))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads

"""
The uncertainty-weighted loss
=============================

Per pixel the loss is ``((target - m) / u)**2 + u**2`` halved. For a
fixed residual r it is smallest at ``u = sqrt(|r|)``, where it equals
``|r|``: the network can buy down a large error by reporting a large
uncertainty, but pays for it in the second term.
"""
import numpy as np
from scipy.optimize import minimize_scalar

from amodal import losses as L

one = np.ones((1, 1))
for r in (0.04, 0.25, 1.0):
    res = minimize_scalar(lambda u: float(L.asbu_loss((1 - r) * one, u * one, one)),
                          bounds=(1e-3, 10), method="bounded", options={"xatol": 1e-12})
    print(f"r={r:<5} best u={res.x:.6f} (sqrt r={np.sqrt(r):.6f}) loss={res.fun:.6f}")

# pixels inside the weight region count lambda = 5 times
m, u, t = np.full((2, 2), 0.3), np.full((2, 2), 0.5), np.ones((2, 2))
region = np.array([[1, 0], [0, 0]], bool)
print("unweighted", float(L.asbu_loss(m, u, t)), "weighted", float(L.asbu_loss(m, u, t, region)))

# closed-form gradients agree with autograd and with central differences
rng = np.random.default_rng(0)
grid = dict(m=rng.uniform(0.1, 0.9, (8, 8)), u=rng.uniform(0.3, 1.5, (8, 8)),
            target=(rng.random((8, 8)) < 0.5).astype(float), weight_region=rng.random((8, 8)) < 0.3)
gm, gu = L.asbu_grad(**grid)
am, au = L.autograd_grad(L.asbu_loss, **grid)
fd = L.finite_difference_grad(L.asbu_loss, grid)
print("closed form vs autograd:", np.abs(gm - am).max(), np.abs(gu - au).max())
print("closed form vs differences:", np.abs(gm - fd["m"]).max(), np.abs(gu - fd["u"]).max())

# the alternatives share the same call signature
for kind in ("asbu", "gaussian", "ubce", "bce"):
    print(kind, round(float(L.compute_loss(kind, grid["m"], grid["u"], grid["target"])), 4))

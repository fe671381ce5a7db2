"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

STEP = 1e-5
# Denominator floor: entries whose gradient is below this are compared
# in absolute terms (round-off of a central difference at STEP is ~1e-10).
FLOOR = 1e-4


def rel_error(analytic, numeric, floor=FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(f, x, step=STEP):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return g


def check_layer(layer, x, forward=None, seed=0):
    """Max relative error over the input and every parameter of ``layer``.

    The scalar objective is ``sum(out * R)`` for a fixed random ``R``.
    """
    forward = forward or layer.forward
    rng = np.random.default_rng(seed)
    out = forward(x)
    r = rng.standard_normal(out.shape)
    layer.zero_grad()
    gx = layer.backward(r)

    def objective():
        y = forward(x)
        layer._cache = None
        return float(np.sum(y * r))

    errors = {}
    if gx is not None:
        errors["input"] = rel_error(gx, numeric_grad(objective, x))
    for name, p, g in layer.named_parameters():
        analytic = g.copy()
        errors[name] = rel_error(analytic, numeric_grad(objective, p))
    return errors

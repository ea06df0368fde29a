"""Central finite-difference gradient checking."""

import numpy as np

from ..errors import NumericError


def finite_diff_check(f, params, eps=1e-5, return_details=False):
    """Max relative error between analytic and central-difference gradients.

    ``f(params)`` must return a scalar loss and leave analytic gradients in
    ``params`` (it is called once after ``params.zero_grad()``). Frozen entries
    are skipped. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``. Run with a float64 store.
    """
    params.zero_grad()
    base = f(params)
    if not np.isfinite(base):
        raise NumericError("f returned a non-finite value")
    analytic = {p.name: p.grad.copy() for p in params}
    worst, where = 0.0, None
    for p in params:
        flat = p.value.reshape(-1)
        grad = analytic[p.name].reshape(-1)
        frozen = None if p.frozen is None else p.frozen.reshape(-1)
        for i in range(flat.size):
            if frozen is not None and frozen[i]:
                continue
            orig = flat[i]
            flat[i] = orig + eps
            up = f(params)
            flat[i] = orig - eps
            down = f(params)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"f non-finite while perturbing {p.name}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            a = float(grad[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst, where = err, (p.name, i, a, numeric)
    params.zero_grad()
    for p in params:
        p.grad[...] = analytic[p.name]
    if return_details:
        return worst, where
    return worst

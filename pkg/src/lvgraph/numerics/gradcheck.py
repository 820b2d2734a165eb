from __future__ import annotations

import numpy as np

from .tensor import ShapeError, backward, no_grad


def relative_error(analytic, numeric, floor=1e-6):
    """|a - n| / max(|a|, |n|, floor), elementwise; both zero gives 0."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(fn, store, step=1e-5, floor=1e-6, names=None, report=None, fd_dtype=None):
    """Compare tape gradients of ``fn()`` with central finite differences.

    ``fn`` must build a scalar loss from parameters in ``store`` and be
    deterministic.  Every element of every parameter is perturbed.  Returns
    the maximum relative error; ``report`` (a dict) receives per-parameter
    maxima when given.

    ``fd_dtype`` (e.g. ``np.longdouble``) evaluates the perturbed losses in
    a wider type, which takes the roundoff of (f+ - f-) / 2h out of the
    comparison; the analytic gradients still come from the store's dtype.
    """
    fn()  # materialize lazily created parameters
    store.zero_grad()
    loss = fn()
    if loss.data.size != 1:
        raise ShapeError("grad_check fragment must return a scalar")
    backward(loss)
    analytic_grads = {name: p.grad.copy() for name, p in store.items()}
    base_dtype = store.dtype
    fd_dtype = np.dtype(fd_dtype) if fd_dtype is not None else base_dtype
    if fd_dtype != base_dtype:
        store.astype(fd_dtype)
    worst = 0.0
    for name, p in store.items():
        if names is not None and name not in names:
            continue
        analytic = analytic_grads[name]
        numeric = np.zeros(p.shape, dtype=fd_dtype)
        flat = p.data.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                f_plus = np.asarray(fn().data, dtype=fd_dtype)
                flat[i] = orig - step
                f_minus = np.asarray(fn().data, dtype=fd_dtype)
                flat[i] = orig
                numeric.reshape(-1)[i] = (f_plus - f_minus) / (2 * fd_dtype.type(step))
        numeric = numeric.astype(np.float64)
        err = float(relative_error(analytic, numeric, floor).max()) if p.data.size else 0.0
        if report is not None:
            report[name] = err
        worst = max(worst, err)
    if fd_dtype != base_dtype:
        store.astype(base_dtype)
    store.zero_grad()
    return worst

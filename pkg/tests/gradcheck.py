"""Shared central-difference gradient checker for loss heads and encoders."""

import numpy as np


def check_parameter_gradients(loss_fn, params, rng, entries_per_tensor=3,
                              h=1e-6, rtol=1e-4):
    """Verify autograd gradients of ``loss_fn()`` for sampled entries of
    every parameter tensor.  Returns the worst relative error seen."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        grad = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        count = min(entries_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            hi = float(loss_fn().data)
            flat[i] = old - h
            lo = float(loss_fn().data)
            flat[i] = old
            fd = (hi - lo) / (2 * h)
            ad = gflat[i]
            # the absolute floor keeps finite-difference roundoff noise from
            # dominating the ratio when the true gradient is near zero
            rel = abs(fd - ad) / max(abs(fd) + abs(ad), 1e-5)
            worst = max(worst, rel)
            assert rel < rtol, (
                f"{getattr(p, 'name', '?')}[{i}]: fd={fd:.3e} ad={ad:.3e} "
                f"rel={rel:.2e}")
    return worst

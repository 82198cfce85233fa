import numpy as np

REAL = np.float32


def central_diff_max_rel_err(loss_fn, tensors, rng, per_tensor=2, h=1e-3):
    """Compare already-populated analytic grads on ``tensors`` against
    central differences of ``loss_fn`` (pure forward, returns float).

    Samples ``per_tensor`` coordinates from each tensor; perturbations are
    applied in place and restored. Relative error per coordinate is
    |a - n| / max(1, |a|, |n|); returns the max over all sampled coords.
    """
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "analytic gradient missing"
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1)
        count = min(per_tensor, flat.size)
        for i in rng.choice(flat.size, size=count, replace=False):
            keep = flat[i]
            flat[i] = REAL(np.float64(keep) + h)
            hi_val = np.float64(flat[i])
            f_hi = loss_fn()
            flat[i] = REAL(np.float64(keep) - h)
            lo_val = np.float64(flat[i])
            f_lo = loss_fn()
            flat[i] = keep
            numeric = (f_hi - f_lo) / (hi_val - lo_val)
            a = np.float64(grad[i])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, rel)
    return worst

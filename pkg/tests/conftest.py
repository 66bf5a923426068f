import numpy as np
import pytest

from tvtlab import autodiff as ad


def finite_diff_check(param_tensors, forward_fn, rel_tol=1e-4, h=1e-4,
                      max_coords_per_tensor=12, rng=None):
    """Norm-wise comparison of analytic vs central-difference gradients.

    ``forward_fn`` rebuilds the scalar loss from current parameter
    values. Tensors must be float64 for the stated tolerance to be
    meaningful.
    """
    rng = rng or np.random.default_rng(0)
    for t in param_tensors:
        t.zero_grad()
    loss = forward_fn()
    ad.backward(loss)
    analytic = []
    numeric = []
    for t in param_tensors:
        assert t.data.dtype == np.float64, "gradient checks run in float64"
        flat = t.data.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if n <= max_coords_per_tensor
                  else rng.choice(n, size=max_coords_per_tensor, replace=False))
        gflat = t.grad.reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(forward_fn().data)
            flat[idx] = orig - h
            down = float(forward_fn().data)
            flat[idx] = orig
            numeric.append((up - down) / (2 * h))
            analytic.append(gflat[idx])
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    rel = np.linalg.norm(analytic - numeric) / denom
    assert rel < rel_tol, f"gradient mismatch: relative error {rel:.3g}"
    return rel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

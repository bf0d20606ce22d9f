"""Central finite-difference check of :func:`backward`."""
import numpy as np

from .network import backward, forward_nll

# below this gradient scale a float64 central difference (h=1e-5) cannot
# resolve relative error; used as the denominator floor
SCALE_FLOOR = 1e-6


def numeric_gradient(params, batch, name, index, step=1e-5, dropout_on=False, seed=0):
    arr = params[name]
    old = arr[index]

    def loss():
        rec = forward_nll(params, batch, dropout_on, seed)
        return rec.total / rec.n_tokens.sum()

    arr[index] = old + step
    up = loss()
    arr[index] = old - step
    down = loss()
    arr[index] = old
    return (up - down) / (2 * step)


def check_gradients(params, batch, dropout_on=False, seed=0, step=1e-5,
                    max_entries=None, rng=None):
    """Compare analytic and numeric gradients tensor by tensor.

    Returns ``{name: relative error}`` where the error of a tensor is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, SCALE_FLOOR)``
    over the checked entries. ``max_entries`` samples that many entries per
    tensor (all entries when None).
    """
    if params.dtype != np.float64:
        raise ValueError("gradient checks need a float64 model")
    rng = rng or np.random.default_rng(0)
    record = forward_nll(params, batch, dropout_on, seed)
    grads = backward(params, record)
    errors = {}
    for name, arr in params.items():
        flat = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat = rng.choice(arr.size, size=max_entries, replace=False)
        analytic, numeric = [], []
        for k in flat:
            idx = np.unravel_index(k, arr.shape)
            analytic.append(grads[name][idx])
            numeric.append(numeric_gradient(params, batch, name, idx, step, dropout_on, seed))
        analytic, numeric = np.array(analytic), np.array(numeric)
        scale = max(np.abs(analytic).max(), np.abs(numeric).max(), SCALE_FLOOR)
        errors[name] = float(np.abs(analytic - numeric).max() / scale)
    return errors

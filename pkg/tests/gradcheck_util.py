"""Central finite-difference gradient checking for small torch models."""

import numpy as np
import torch

FD_STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-9


def numeric_grad(loss_fn, param: torch.Tensor, step: float = FD_STEP) -> np.ndarray:
    grad = np.zeros(param.shape)
    flat = param.data.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        with torch.no_grad():
            plus = float(loss_fn())
            flat[i] = orig - step
            minus = float(loss_fn())
        flat[i] = orig
        grad.reshape(-1)[i] = (plus - minus) / (2 * step)
    return grad


def analytic_grads(loss_fn, params):
    out = loss_fn()
    grads = torch.autograd.grad(out, params, allow_unused=True)
    return [np.zeros(p.shape) if g is None else g.detach().numpy() for p, g in zip(params, grads)]


def max_violation(loss_fn, named_params, step=FD_STEP, rtol=RTOL, atol=ATOL):
    """Largest ``|a - n| / (rtol * max(|a|, |n|) + atol)`` over all entries; <= 1 passes."""
    names, params = zip(*named_params)
    analytic = analytic_grads(loss_fn, list(params))
    worst, where, nonzero = 0.0, None, 0
    for name, p, a in zip(names, params, analytic):
        n = numeric_grad(loss_fn, p, step)
        ratio = np.abs(a - n) / (rtol * np.maximum(np.abs(a), np.abs(n)) + atol)
        nonzero += int(np.count_nonzero(np.abs(a) > 1e-7))
        if ratio.max() > worst:
            worst, where = float(ratio.max()), name
    return worst, where, nonzero

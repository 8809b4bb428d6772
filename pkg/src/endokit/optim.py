"""Plain SGD and Adam on the autodiff parameter tensors.

Updates reassign ``param.data`` to a fresh array rather than mutating in
place, so arrays handed out earlier (histories, snapshots) stay intact.
"""

import numpy as np


def sgd_step(params, grads, lr):
    """One gradient-descent step; params missing from grads are skipped."""
    for p in params:
        g = grads.get(p)
        if g is None:
            continue
        p.data = p.data - lr * g


def adam_init(params):
    """Fresh first/second moment state for `adam_step`."""
    return {
        "t": 0,
        "m": {p: np.zeros_like(p.data) for p in params},
        "v": {p: np.zeros_like(p.data) for p in params},
    }


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step with bias correction; mutates and returns `state`."""
    state["t"] += 1
    t = state["t"]
    for p in params:
        g = grads.get(p)
        if g is None:
            continue
        m = state["m"][p] = beta1 * state["m"][p] + (1.0 - beta1) * g
        v = state["v"][p] = beta2 * state["v"][p] + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state

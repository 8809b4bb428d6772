"""Feedforward baseline trained on the shared tape, for like-for-like
comparisons against kernel machines (same optimizer, same loss)."""

import numpy as np

from . import autodiff as ad
from .errors import NonFinite
from .optim import adam_init, adam_step, sgd_step

_ACTIVATIONS = {"relu": ad.relu, "sigmoid": ad.sigmoid, "tanh": ad.tanh}


class MLP:
    """Fully connected net: affine layers with pointwise nonlinearities.

    layer_dims: (in, hidden..., out), all positive; activations: one name
    per hidden layer, from relu/sigmoid/tanh.  The output layer is linear.
    Weights start uniform +-1/sqrt(fan_in), biases at zero.
    """

    def __init__(self, layer_dims, activations, seed=0):
        layer_dims = tuple(int(d) for d in layer_dims)
        if len(layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if any(d < 1 for d in layer_dims):
            raise ValueError(f"layer dims must be positive, got {layer_dims}")
        if len(activations) != len(layer_dims) - 2:
            raise ValueError(f"need {len(layer_dims) - 2} activations, "
                             f"got {len(activations)}")
        for name in activations:
            if name not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        self.layer_dims = layer_dims
        self.activations = tuple(activations)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            self.weights.append(ad.parameter(rng.uniform(-bound, bound, (d_in, d_out))))
            self.biases.append(ad.parameter(np.zeros(d_out)))

    @property
    def parameters(self):
        return self.weights + self.biases

    def param_count(self):
        """Analytic count: sum over layers of (fan_in + 1) * fan_out."""
        return sum((d_in + 1) * d_out
                   for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def forward(self, x):
        """Tape forward for a (batch, in_dim) tensor or array."""
        h = x if isinstance(x, ad.Tensor) else ad.constant(np.atleast_2d(x))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = _ACTIVATIONS[self.activations[i]](h)
        return h

    def predict(self, x):
        """Plain forward pass outside any tape."""
        return self.forward(np.asarray(x, dtype=np.float64)).data


def mlp_baseline(layer_dims, activations, dataset, config):
    """Train an MLP on (inputs, targets) with MSE, mirroring the kernel fits.

    config keys: lr, epochs, optimizer ('adam' or 'sgd'), seed, val
    ((inputs, targets) or None).  Returns (model, history); history rows
    carry train loss, parameter count, and val loss when a val set is given.
    """
    x, y = dataset
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]

    lr = float(config.get("lr", 1e-2))
    epochs = int(config.get("epochs", 1000))
    opt_name = config.get("optimizer", "adam")
    seed = int(config.get("seed", 0))
    val = config.get("val")

    model = MLP(layer_dims, activations, seed=seed)
    params = model.parameters
    state = adam_init(params) if opt_name == "adam" else None
    x_const = ad.constant(x)
    y_const = ad.constant(y)
    inv_n = 1.0 / len(x)

    history = []
    for epoch in range(1, epochs + 1):
        with ad.Tape() as tape:
            pred = model.forward(x_const)
            loss = ad.scale(ad.squared_norm(ad.subtract(pred, y_const)), inv_n)
        if not np.isfinite(float(loss.data)):
            raise NonFinite(f"loss diverged at epoch {epoch}")
        grads = ad.backward(tape, loss)
        if opt_name == "adam":
            adam_step(params, grads, state, lr=lr)
        else:
            sgd_step(params, grads, lr)
        record = {"epoch": epoch, "train_loss": float(loss.data),
                  "param_count": model.param_count()}
        if val is not None:
            pv = model.predict(val[0])
            yv = np.asarray(val[1], dtype=np.float64)
            if yv.ndim == 1:
                yv = yv[:, None]
            record["val_loss"] = float(np.sum((pv - yv) ** 2) / len(yv))
        history.append(record)
    return model, history

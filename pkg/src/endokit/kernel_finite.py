"""Finite-depth kernel machines on a filtration of R^D.

A filtration 0 = d_0 <= d_1 <= ... <= d_{n+1} = D splits the space into
blocks [d_i, d_{i+1}).  Level i carries the operator-valued RBF kernel
K_i(x1, x2) = exp(-gamma ||x1[:d_i] - x2[:d_i]||^2) acting on block i
only: it reads strictly earlier coordinates and writes its own block,
so the induced map

    f(x) = sum_i sum_j K_i(x, x_j) c_j

is a sum of n+1 square-zero machines layered by level.  The stable
state h = g + f(h) therefore falls out of one ordered sweep over the
levels, no iteration needed.  Level 0 has an empty prefix and its
kernel is the constant 1, making block 0 a bias-like term.

Anchors x_j and coefficients c_j live in R^D; the free parameter count
is m*D (the coefficients; anchors are maintained as stable states of
the training inputs, not free variables).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import backend
from .errors import DimMismatch, NonFinite
from .machines import StableState
from .optim import adam_init, adam_step, sgd_step


@dataclass(frozen=True)
class Filtration:
    """Non-decreasing boundaries 0 = d_0 <= ... <= d_{n+1} = D."""

    total_dim: int
    boundaries: tuple

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2 or b[0] != 0 or b[-1] != self.total_dim:
            raise ValueError("boundaries must run from 0 to total_dim")
        if any(b[i] > b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("boundaries must be non-decreasing")

    @property
    def levels(self):
        """Number of kernel levels (one per block)."""
        return len(self.boundaries) - 1

    def block(self, i):
        """Coordinate slice written by level i."""
        return slice(self.boundaries[i], self.boundaries[i + 1])

    @staticmethod
    def equal_blocks(total_dim, levels):
        """Filtration splitting R^total_dim into `levels` near-equal blocks."""
        if levels < 1 or levels > total_dim:
            raise ValueError("need 1 <= levels <= total_dim")
        cuts = np.linspace(0, total_dim, levels + 1)
        return Filtration(total_dim, tuple(int(round(c)) for c in cuts))


@dataclass(frozen=True)
class SumKernel:
    """Sum of per-level prefix RBF kernels on a filtration."""

    filtration: Filtration
    gamma: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("bandwidth gamma must be positive")

    def level_grams(self, a, b):
        """Stack of per-level gram matrices K_i(a_rows, b_rows), shape (L, A, B)."""
        a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
        b = np.ascontiguousarray(np.asarray(b, dtype=np.float64))
        bounds = np.asarray(self.filtration.boundaries, dtype=np.int64)
        return backend.prefix_rbf_grams(a, b, bounds, self.gamma)


@dataclass
class KernelMachineParams:
    """Anchors and coefficients of the representer form sum_j K(., x_j) c_j."""

    kernel: SumKernel
    anchors: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        D = self.kernel.filtration.total_dim
        if self.anchors.ndim != 2 or self.anchors.shape[1] != D:
            raise DimMismatch(f"anchors must be (m, {D}), got {self.anchors.shape}")
        if self.coefficients.shape != self.anchors.shape:
            raise DimMismatch("need one coefficient vector per anchor")

    @property
    def m(self):
        return self.anchors.shape[0]


def param_count(params):
    """Free parameters: m * D coefficients (anchors are derived state)."""
    return int(params.coefficients.size)


@dataclass
class TrainingObjective:
    """Data loss plus mu times the squared RKHS norm."""

    mu: float = 0.0
    loss: str = "mse"

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")


def kernel_apply_batch(params, x):
    """f(x) rows for a batch of inputs, block semantics per level."""
    x = np.asarray(x, dtype=np.float64)
    filt = params.kernel.filtration
    if x.ndim != 2 or x.shape[1] != filt.total_dim:
        raise DimMismatch(f"inputs must be (batch, {filt.total_dim}), got {x.shape}")
    grams = params.kernel.level_grams(x, params.anchors)
    out = np.zeros_like(x)
    for i in range(filt.levels):
        blk = filt.block(i)
        out[:, blk] = grams[i] @ params.coefficients[:, blk]
    return out


def kernel_apply(params, x):
    """f(x) = sum_i sum_j K_i(x, x_j) c_j for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimMismatch(f"expected a vector, got shape {x.shape}")
    return kernel_apply_batch(params, x[None, :])[0]


def stable_state_batch(params, g):
    """Stable states h = g + f(h) for a batch of inputs, one level sweep.

    Level i reads only finished coordinates (< d_i), so overwriting the
    blocks in order lands exactly on the fixed point.
    """
    g = np.asarray(g, dtype=np.float64)
    filt = params.kernel.filtration
    if g.ndim != 2 or g.shape[1] != filt.total_dim:
        raise DimMismatch(f"inputs must be (batch, {filt.total_dim}), got {g.shape}")
    gamma = params.kernel.gamma
    h = g.copy()
    for i in range(filt.levels):
        d = filt.boundaries[i]
        blk = filt.block(i)
        gram = backend.rbf_gram(np.ascontiguousarray(h[:, :d]),
                                np.ascontiguousarray(params.anchors[:, :d]), gamma)
        h[:, blk] = g[:, blk] + gram @ params.coefficients[:, blk]
    return h


def stable_state(params, g):
    """Stable state for one input vector; residual is float-roundoff small."""
    g = np.asarray(g, dtype=np.float64)
    h = stable_state_batch(params, g[None, :])[0]
    res = float(np.linalg.norm(h - g - kernel_apply(params, h)))
    return StableState(value=h, iterations=params.kernel.filtration.levels, residual=res)


def rkhs_norm_sq(params):
    """Quadratic form sum_{j,j'} c_j . K(x_j, x_j') c_j' of the kernel Gram."""
    grams = params.kernel.level_grams(params.anchors, params.anchors)
    filt = params.kernel.filtration
    total = 0.0
    for i in range(filt.levels):
        ci = params.coefficients[:, filt.block(i)]
        total += float(np.sum(ci * (grams[i] @ ci)))
    return total


def psd_check(gram):
    """Smallest eigenvalue of a (defensively symmetrized) matrix."""
    gram = np.asarray(gram, dtype=np.float64)
    sym = 0.5 * (gram + gram.T)
    return float(np.linalg.eigvalsh(sym)[0])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _forward_tape(c_tensor, anchors, g, filt, gamma):
    """Differentiable level sweep; anchors and inputs are constants.

    Returns the full stable-state tensor (batch, D) built by
    concatenating the per-level blocks in order.
    """
    m = anchors.shape[0]
    batch = g.shape[0]
    blocks = []
    for i in range(filt.levels):
        d = filt.boundaries[i]
        blk = filt.block(i)
        width = blk.stop - blk.start
        if d == 0:
            gram = ad.constant(np.ones((batch, m)))
        else:
            prefix = blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=1)
            prefix = ad.slice_block(prefix, 0, d, axis=1)
            xa = anchors[:, :d]
            hh = ad.reshape(ad.reduce_sum(ad.square(prefix), axis=1), (batch, 1))
            xx = ad.constant(np.sum(xa * xa, axis=1))
            cross = ad.matmul(prefix, ad.constant(xa.T))
            sq = ad.subtract(ad.add(hh, xx), ad.scale(cross, 2.0))
            gram = ad.exp(ad.scale(sq, -gamma))
        delta = ad.matmul(gram, ad.slice_block(c_tensor, blk.start, blk.stop, axis=1))
        blocks.append(ad.add(ad.constant(g[:, blk]), delta))
    return blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=1)


def _rkhs_tape(c_tensor, grams, filt):
    """Differentiable squared RKHS norm with fixed anchor grams."""
    total = None
    for i in range(filt.levels):
        blk = filt.block(i)
        ci = ad.slice_block(c_tensor, blk.start, blk.stop, axis=1)
        term = ad.reduce_sum(ad.mul(ci, ad.matmul(ad.constant(grams[i]), ci)))
        total = term if total is None else ad.add(total, term)
    return total


def embed_inputs(s, total_dim, at=0):
    """Place raw inputs (batch, p) into coords [at, at+p) of R^total_dim."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    g = np.zeros((s.shape[0], total_dim))
    g[:, at:at + s.shape[1]] = s
    return g


def predict(params, s, readout, embed_at=0):
    """Stable-state readout for raw inputs: h(embed(s))[readout slice]."""
    g = embed_inputs(s, params.kernel.filtration.total_dim, at=embed_at)
    h = stable_state_batch(params, g)
    return h[:, readout[0]:readout[1]]


def fit(dataset, objective, config):
    """Fit coefficients by gradient descent with per-epoch anchor refresh.

    dataset: (inputs (m, p), targets (m, q)).  objective: a
    TrainingObjective.  config keys: filtration (required), gamma, lr,
    epochs, optimizer ('adam' or 'sgd'), embed_at, readout (start, stop;
    default last q coords), val ((inputs, targets) or None), anchor_refresh
    (epochs between refreshes, default 1).

    Anchors start at the embedded inputs (the stable state for c = 0)
    and are recomputed as x_j = h(s_j) on the refresh cadence, matching
    the representer form of the optimum.  History records train/val data
    loss, the squared RKHS norm, and the full objective per epoch.
    Raises NonFinite if the objective diverges.
    """
    s_raw, y = dataset
    s_raw = np.asarray(s_raw, dtype=np.float64)
    if s_raw.ndim == 1:
        s_raw = s_raw[:, None]
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]

    filt = config["filtration"]
    gamma = float(config.get("gamma", 1.0))
    lr = float(config.get("lr", 1e-2))
    epochs = int(config.get("epochs", 1000))
    embed_at = int(config.get("embed_at", 0))
    readout = tuple(config.get("readout", (filt.total_dim - y.shape[1], filt.total_dim)))
    refresh = int(config.get("anchor_refresh", 1))
    opt_name = config.get("optimizer", "adam")
    val = config.get("val")

    kernel = SumKernel(filtration=filt, gamma=gamma)
    g_train = embed_inputs(s_raw, filt.total_dim, at=embed_at)
    m = g_train.shape[0]
    params = KernelMachineParams(kernel=kernel, anchors=g_train.copy(),
                                 coefficients=np.zeros((m, filt.total_dim)))

    c = ad.parameter(params.coefficients.copy())
    state = adam_init([c]) if opt_name == "adam" else None
    history = []
    for epoch in range(1, epochs + 1):
        if (epoch - 1) % refresh == 0:
            params.coefficients = c.data
            params.anchors = stable_state_batch(params, g_train)
        grams = params.kernel.level_grams(params.anchors, params.anchors)

        with ad.Tape() as tape:
            h = _forward_tape(c, params.anchors, g_train, filt, gamma)
            pred = ad.slice_block(h, readout[0], readout[1], axis=1)
            err = ad.subtract(pred, ad.constant(y))
            data_loss = ad.scale(ad.squared_norm(err), 1.0 / m)
            obj = data_loss
            if objective.mu > 0:
                obj = ad.add(obj, ad.scale(_rkhs_tape(c, grams, filt), objective.mu))
        if not np.isfinite(float(obj.data)):
            raise NonFinite(f"objective diverged at epoch {epoch}")
        grads = ad.backward(tape, obj)
        if opt_name == "adam":
            adam_step([c], grads, state, lr=lr)
        else:
            sgd_step([c], grads, lr)

        params.coefficients = c.data
        record = {
            "epoch": epoch,
            "train_loss": float(data_loss.data),
            "rkhs_norm_sq": rkhs_norm_sq(params),
            "objective": float(obj.data),
        }
        if val is not None:
            pv = predict(params, val[0], readout, embed_at=embed_at)
            yv = np.asarray(val[1], dtype=np.float64)
            if yv.ndim == 1:
                yv = yv[:, None]
            record["val_loss"] = float(np.sum((pv - yv) ** 2) / len(yv))
        history.append(record)

    params.coefficients = c.data
    return params, history


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

PARAMS_SCHEMA = "endokit-kernel-machine/1"


def params_to_json(params):
    """Versioned JSON record of filtration, bandwidth, anchors, coefficients."""
    return json.dumps({
        "schema": PARAMS_SCHEMA,
        "filtration": {
            "total_dim": params.kernel.filtration.total_dim,
            "boundaries": list(params.kernel.filtration.boundaries),
        },
        "gamma": params.kernel.gamma,
        "anchors": params.anchors.tolist(),
        "coefficients": params.coefficients.tolist(),
    }, indent=2, sort_keys=True)


def params_from_json(payload):
    """Rebuild KernelMachineParams from params_to_json output."""
    if isinstance(payload, str):
        payload = json.loads(payload)
    if payload.get("schema") != PARAMS_SCHEMA:
        raise ValueError(f"unsupported schema {payload.get('schema')!r}")
    filt = Filtration(total_dim=int(payload["filtration"]["total_dim"]),
                      boundaries=tuple(payload["filtration"]["boundaries"]))
    kernel = SumKernel(filtration=filt, gamma=float(payload["gamma"]))
    return KernelMachineParams(kernel=kernel,
                               anchors=np.asarray(payload["anchors"], dtype=np.float64),
                               coefficients=np.asarray(payload["coefficients"], dtype=np.float64))

"""Infinite-depth kernel machines on paths over a time interval.

The state space is the space of square-integrable paths [t0, T] -> R^n,
discretized on a shared uniform grid, filtered by restriction to
subintervals [t0, t].  A machine is a sum of kernel sections anchored at
trajectories x_j with coefficient paths c_j; its stable state solves

    u(t) = psi(t) + int_{t0}^t sum_j k(u(s), x_j(s)) c_j(t) ds

with the scalar RBF k(a, b) = exp(-gamma |a - b|^2).  The integral
kernel is separable, so states come from the fourth-order scheme in
:mod:`endokit.volterra`; training differentiates through the unrolled
integration steps on the tape.

Coefficient paths are truncated Fourier series over [t0, T]: the number
of retained frequencies is the architecture knob, and a basis with F
frequencies embeds into one with 2F by zero-padding, reproducing the
same machine bit for bit.
"""

from dataclasses import dataclass
from typing import Optional

import json
import numpy as np

from . import autodiff as ad
from . import backend
from .errors import DimMismatch, NonFinite
from .optim import adam_init, adam_step
from .volterra import SeparableKernel, TimeGrid, solve_separable


# ---------------------------------------------------------------------------
# filtration on grid functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousFiltration:
    """Nested subspaces of paths [t0, T] -> R^dim, sampled on a grid.

    A grid function is an array of shape (steps + 1, dim) holding node
    values.  The projection onto the subspace of paths supported on
    [t0, t] keeps node values at times <= t and zeroes the rest.
    """

    grid: TimeGrid
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("state dimension must be positive")

    @property
    def t0(self):
        return self.grid.t0

    @property
    def T(self):
        return self.grid.T

    def check_function(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.grid.steps + 1, self.dim):
            raise DimMismatch(
                f"grid function has shape {x.shape}, expected "
                f"{(self.grid.steps + 1, self.dim)}")
        return x

    def restrict(self, x, t):
        """Project onto paths supported on [t0, t]: zero node values past t."""
        x = self.check_function(x)
        mask = (self.grid.nodes <= t).astype(np.float64)
        return x * mask[:, None]


def fourier_basis(times, t0, T, max_frequency):
    """Columns [1, cos(w t'), sin(w t'), cos(2w t'), ...] with t' = t - t0.

    The base frequency is w = 2 pi / (T - t0); max_frequency F >= 0 gives
    2F + 1 columns.
    """
    if max_frequency < 0:
        raise ValueError("max_frequency must be >= 0")
    times = np.asarray(times, dtype=np.float64)
    omega = 2.0 * np.pi / (T - t0)
    cols = [np.ones_like(times)]
    for k in range(1, max_frequency + 1):
        cols.append(np.cos(k * omega * (times - t0)))
        cols.append(np.sin(k * omega * (times - t0)))
    return np.stack(cols, axis=-1)


@dataclass
class FourierCoefficients:
    """Coefficient paths c_j(t) in a truncated Fourier basis over [t0, T].

    values[j, d, q] multiplies basis column q in output coordinate d of
    path j.  Columns pair cosines and sines up to the retained maximum
    frequency; evaluation accumulates column by column so that a
    zero-padded copy in a wider basis reproduces identical floats.
    """

    values: np.ndarray
    t0: float
    T: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("values must have shape (m, dim, 2F + 1)")
        if self.values.shape[2] % 2 != 1:
            raise ValueError("basis size must be odd: [1, cos, sin, ...]")
        if not self.T > self.t0:
            raise ValueError("need T > t0")

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def max_frequency(self):
        return (self.values.shape[2] - 1) // 2

    def evaluate(self, times):
        """All paths at the given times: (len(times), m, dim)."""
        basis = fourier_basis(times, self.t0, self.T, self.max_frequency)
        out = np.zeros((len(basis), self.m, self.dim))
        for q in range(self.values.shape[2]):
            out += basis[:, q, None, None] * self.values[None, :, :, q]
        return out

    def zero_pad(self, max_frequency):
        """The same paths expressed in a basis with more frequencies."""
        if max_frequency < self.max_frequency:
            raise ValueError("target basis is smaller than the current one")
        wide = np.zeros((self.m, self.dim, 2 * max_frequency + 1))
        wide[:, :, :self.values.shape[2]] = self.values
        return FourierCoefficients(values=wide, t0=self.t0, T=self.T)


@dataclass
class InfiniteMachineParams:
    """Anchor trajectories, coefficient paths, kernel width, and plumbing.

    anchors[j] is a grid function (steps + 1, dim); coefficients holds one
    Fourier path per anchor.  encoder (optional) linearly maps feature
    vectors to R^dim before they become constant-in-time initial data;
    readout_weights/bias map the final-time state to scores.
    """

    filtration: ContinuousFiltration
    anchors: np.ndarray
    coefficients: FourierCoefficients
    gamma: float = 1.0
    encoder: Optional[np.ndarray] = None
    readout_weights: Optional[np.ndarray] = None
    readout_bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        steps, dim = self.filtration.grid.steps, self.filtration.dim
        if self.anchors.ndim != 3 or self.anchors.shape[1:] != (steps + 1, dim):
            raise DimMismatch(
                f"anchors must have shape (m, {steps + 1}, {dim}), "
                f"got {self.anchors.shape}")
        if self.coefficients.m != self.anchors.shape[0]:
            raise DimMismatch("need one coefficient path per anchor")
        if self.coefficients.dim != dim:
            raise DimMismatch("coefficient paths must live in the state space")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @property
    def m(self):
        return self.anchors.shape[0]


# ---------------------------------------------------------------------------
# encoding and readout
# ---------------------------------------------------------------------------

def encode_vector(sample, filtration, embedding=None):
    """Feature vector -> point of R^dim (the constant value of psi)."""
    v = np.asarray(sample, dtype=np.float64).ravel()
    dim = filtration.dim
    if embedding is not None:
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (dim, v.size):
            raise DimMismatch(
                f"embedding has shape {embedding.shape}, expected {(dim, v.size)}")
        return embedding @ v
    if v.size > dim:
        raise DimMismatch(
            f"feature dim {v.size} exceeds state dim {dim}; pass an embedding")
    out = np.zeros(dim)
    out[:v.size] = v
    return out


def encode_input(sample, filtration, embedding=None):
    """Feature vector -> constant-in-time initial path psi on the grid."""
    point = encode_vector(sample, filtration, embedding)
    return np.tile(point, (filtration.grid.steps + 1, 1))


def readout_scores(params, u):
    """Affine scores from the final-time state u(T).

    u may be a single grid function (steps + 1, dim) or a batch of
    final-time states (B, dim).
    """
    w, b = params.readout_weights, params.readout_bias
    if w is None or b is None:
        raise ValueError("params has no readout")
    u = np.asarray(u, dtype=np.float64)
    u_final = u[-1] if u.ndim == 2 and u.shape[0] == params.filtration.grid.steps + 1 else u
    if u_final.shape[-1] != w.shape[1]:
        raise DimMismatch(
            f"state dim {u_final.shape[-1]} does not match readout {w.shape}")
    return u_final @ w.T + b


# ---------------------------------------------------------------------------
# stable states
# ---------------------------------------------------------------------------

def _half_samples(grid_values):
    """Node samples (steps+1, ...) -> node-and-midpoint samples (2 steps+1, ...)."""
    a = np.asarray(grid_values, dtype=np.float64)
    steps = a.shape[0] - 1
    out = np.empty((2 * steps + 1,) + a.shape[1:])
    out[0::2] = a
    out[1::2] = 0.5 * (a[:-1] + a[1:])
    return out


def _lipschitz_bound(params):
    """Contraction bound: sup |grad_v k| * sum_j sup_t |c_j(t)|."""
    c_sup = params.coefficients.evaluate(params.filtration.grid.half_nodes)
    per_path = np.max(np.linalg.norm(c_sup, axis=2), axis=0)
    return float(np.sqrt(2.0 * params.gamma) * np.exp(-0.5) * np.sum(per_path))


def as_separable(params):
    """The machine's integral kernel in separable component form.

    Component j evaluates the scalar RBF against anchor trajectory x_j
    (linearly interpolated between grid nodes); the shared bilinear map
    scales the coefficient path value by that scalar.
    """
    grid = params.filtration.grid
    nodes = grid.nodes
    gamma = params.gamma
    coeffs = params.coefficients

    def make_component(xj):
        def phi(s, v):
            x_s = np.array([np.interp(s, nodes, xj[:, c])
                            for c in range(xj.shape[1])])
            d = np.asarray(v, dtype=np.float64).ravel() - x_s
            return np.exp(-gamma * float(d @ d))
        return phi

    def make_coefficient(j):
        def c(t):
            return coeffs.evaluate(np.array([t]))[0, j]
        return c

    components = tuple(make_component(params.anchors[j]) for j in range(params.m))
    coefficients = tuple(make_coefficient(j) for j in range(params.m))
    return SeparableKernel(components=components, coefficients=coefficients,
                           bilinear=lambda scalar, vec: scalar * vec,
                           lipschitz=_lipschitz_bound(params))


def stable_state_continuous(params, psi):
    """Stable state for initial path psi, via the separable integral solver.

    psi may be a callable of t, a grid array (steps + 1, dim), or a single
    constant vector (dim,).  Returns a VolterraSolution whose u has one row
    per grid node.
    """
    grid = params.filtration.grid
    psi_arr = np.asarray(psi, dtype=np.float64) if not callable(psi) else None
    if psi_arr is not None and psi_arr.ndim == 1:
        psi = np.tile(psi_arr, (grid.steps + 1, 1))
    return solve_separable(as_separable(params), psi, grid)


def _half_tables(params):
    """Anchor and coefficient samples at the RK4 half nodes."""
    grid = params.filtration.grid
    anchors_half = np.ascontiguousarray(
        _half_samples(np.transpose(params.anchors, (1, 0, 2))))
    coeffs_half = np.ascontiguousarray(params.coefficients.evaluate(grid.half_nodes))
    return anchors_half, coeffs_half


def stable_state_batch(params, points):
    """Stable states for a batch of constant initial paths (B, dim).

    Fast path through the compiled RK4 sweep; returns (u_nodes (B, steps+1,
    dim), z_nodes (B, steps+1, m)).  Agrees with stable_state_continuous
    on each row (same scheme, same half-node tables).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != params.filtration.dim:
        raise DimMismatch(
            f"points have dim {points.shape[1]}, state dim is {params.filtration.dim}")
    anchors_half, coeffs_half = _half_tables(params)
    u_nodes, z_nodes = backend.ckm_forward(points, anchors_half, coeffs_half,
                                           params.gamma, params.filtration.grid.dt)
    if not np.all(np.isfinite(u_nodes)):
        raise NonFinite("stable-state sweep produced non-finite values")
    return u_nodes, z_nodes


# ---------------------------------------------------------------------------
# the induced operator and its filtration compatibility
# ---------------------------------------------------------------------------

def running_gram(x1, x2, params):
    """G(t_i) = Quad(k(x1(s), x2(s)), [t0, t_i]) at every grid node."""
    grid = params.filtration.grid
    x1 = params.filtration.check_function(x1)
    x2 = params.filtration.check_function(x2)
    vals = np.exp(-params.gamma * np.sum((x1 - x2) ** 2, axis=1))
    out = np.zeros(grid.steps + 1)
    np.cumsum(0.5 * grid.dt * (vals[:-1] + vals[1:]), out=out[1:])
    return out


def apply_operator(x1, x2, x, params):
    """The induced operator: (K(x1, x2) x)(t) = G(t) x(t) on grid functions."""
    x = params.filtration.check_function(x)
    return running_gram(x1, x2, params)[:, None] * x


def kernel_gram(params, anchors=None):
    """Full-interval Gram matrix G_ij = Quad(k(x_i(s), x_j(s)), [t0, T])."""
    a = params.anchors if anchors is None else np.asarray(anchors, dtype=np.float64)
    grid = params.filtration.grid
    m = a.shape[0]
    out = np.empty((m, m))
    w = np.full(grid.steps + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    for i in range(m):
        d = a[i][None, :, :] - a
        vals = np.exp(-params.gamma * np.sum(d * d, axis=2))
        out[i] = vals @ w
    return out


def commutation_probes(params, count=8, seed=0):
    """Random (t, x1, x2, x) tuples for filtration_commutation_check."""
    grid = params.filtration.grid
    dim = params.filtration.dim
    rng = np.random.default_rng(seed)
    probes = []
    times = [grid.t0, grid.T]
    times += list(rng.choice(grid.nodes, size=max(count - 2, 0)))
    for t in times[:max(count, 2)]:
        x1 = rng.normal(size=(grid.steps + 1, dim))
        x2 = rng.normal(size=(grid.steps + 1, dim))
        x = rng.normal(size=(grid.steps + 1, dim))
        probes.append((float(t), x1, x2, x))
    return probes


def filtration_commutation_check(params, probes):
    """Largest violation of restriction-compatibility of the operator.

    For each probe (t, x1, x2, x) measures, in the grid sup norm,
      * commutation:  K(x1, x2) pi_t x  vs  pi_t K(x1, x2) x, and
      * causality:    pi_t K(x1, x2) x  vs  pi_t K(pi_t x1, pi_t x2) x,
    where pi_t restricts a path to [t0, t].  Both vanish for the running
    integral kernel because node values at times <= t depend only on
    inputs at times <= t.
    """
    worst = 0.0
    filt = params.filtration
    for t, x1, x2, x in probes:
        kx = apply_operator(x1, x2, x, params)
        k_restrict = apply_operator(x1, x2, filt.restrict(x, t), params)
        commute = np.max(np.abs(k_restrict - filt.restrict(kx, t)))
        kx_proj = apply_operator(filt.restrict(x1, t), filt.restrict(x2, t), x, params)
        causal = np.max(np.abs(filt.restrict(kx, t) - filt.restrict(kx_proj, t)))
        worst = max(worst, float(commute), float(causal))
    return worst


def param_count(params):
    """Analytic trainable count: coefficient entries plus readout."""
    total = params.coefficients.values.size
    if params.readout_weights is not None:
        total += params.readout_weights.size + params.readout_bias.size
    return total


def rkhs_norm_sq(params):
    """Quadrature surrogate for the squared norm of sum_j K(., x_j) c_j.

    Separates into sum_{j,j'} G_{jj'} <c_j, c_j'> with the full-interval
    Gram G and grid-quadrature L2 inner products of the coefficient paths.
    """
    grid = params.filtration.grid
    c_nodes = params.coefficients.evaluate(grid.nodes)
    w = np.full(grid.steps + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    inner = np.einsum("t,tjd,tkd->jk", w, c_nodes, c_nodes)
    return float(np.sum(kernel_gram(params) * inner))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _coeff_matrix(coefficients):
    """FourierCoefficients values (m, dim, Q) -> tape layout (Q, m * dim)."""
    m, dim, q = coefficients.values.shape
    return np.ascontiguousarray(
        np.transpose(coefficients.values, (2, 0, 1)).reshape(q, m * dim))


def _matrix_coeffs(data, m, dim, t0, T):
    """Tape layout (Q, m * dim) -> FourierCoefficients."""
    q = data.shape[0]
    values = np.transpose(data.reshape(q, m, dim), (1, 2, 0))
    return FourierCoefficients(values=values.copy(), t0=t0, T=T)


def _unrolled_scores(cf, w, b, psi_const, anchors_half, basis_half, gamma, grid, m, dim):
    """Tape forward: RK4 over the grid, then affine readout of u(T)."""
    steps = grid.steps
    h = grid.dt
    nb = psi_const.data.shape[0]
    c_flat = ad.matmul(ad.constant(basis_half), cf)
    anchor_sq = np.sum(anchors_half ** 2, axis=2)

    c_cache = {}

    def c_at(hi):
        if hi not in c_cache:
            row = ad.slice_block(c_flat, hi, hi + 1, axis=0)
            c_cache[hi] = ad.reshape(row, (m, dim))
        return c_cache[hi]

    def rate(z, hi):
        u = ad.add(psi_const, ad.matmul(z, c_at(hi)))
        hh = ad.reshape(ad.reduce_sum(ad.square(u), axis=1), (nb, 1))
        cross = ad.matmul(u, ad.constant(anchors_half[hi].T))
        sq = ad.add(ad.subtract(hh, ad.scale(cross, 2.0)),
                    ad.constant(anchor_sq[hi][None, :]))
        return ad.exp(ad.scale(sq, -gamma))

    z = ad.constant(np.zeros((nb, m)))
    for i in range(steps):
        k1 = rate(z, 2 * i)
        k2 = rate(ad.add(z, ad.scale(k1, 0.5 * h)), 2 * i + 1)
        k3 = rate(ad.add(z, ad.scale(k2, 0.5 * h)), 2 * i + 1)
        k4 = rate(ad.add(z, ad.scale(k3, h)), 2 * i + 2)
        incr = ad.add(ad.add(k1, ad.scale(ad.add(k2, k3), 2.0)), k4)
        z = ad.add(z, ad.scale(incr, h / 6.0))
    u_final = ad.add(psi_const, ad.matmul(z, c_at(2 * steps)))
    return ad.add(ad.matmul(u_final, ad.transpose(w)), b)


def _rkhs_surrogate_tape(cf, gram, basis_nodes, weights, m, dim):
    """Tape version of the quadrature norm surrogate for the penalty term."""
    n_nodes = basis_nodes.shape[0]
    c_nodes = ad.reshape(ad.matmul(ad.constant(basis_nodes), cf), (n_nodes, m, dim))
    paths = ad.reshape(ad.transpose(c_nodes, (1, 0, 2)), (m, n_nodes * dim))
    weighted = ad.mul(c_nodes, ad.constant(weights[:, None, None]))
    paths_w = ad.reshape(ad.transpose(weighted, (1, 0, 2)), (m, n_nodes * dim))
    inner = ad.matmul(paths_w, ad.transpose(paths))
    return ad.reduce_sum(ad.mul(inner, ad.constant(gram)))


def _cross_entropy(logits, labels):
    """Mean softmax cross-entropy of (batch, classes) logits vs int labels."""
    n, k = logits.data.shape
    lse = ad.logsumexp(logits, axis=-1)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.reduce_sum(ad.mul(logits, ad.constant(onehot)), axis=-1)
    return ad.scale(ad.reduce_sum(ad.subtract(lse, picked)), 1.0 / n)


def evaluate(params, x, y, embedding=None):
    """(mean cross-entropy, accuracy) of the readout on encoded samples."""
    points = np.stack([encode_vector(s, params.filtration, embedding) for s in x])
    u_nodes, _ = stable_state_batch(params, points)
    scores = readout_scores(params, u_nodes[:, -1, :])
    shifted = scores - scores.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1)) + scores.max(axis=1)
    ce = float(np.mean(lse - scores[np.arange(len(y)), y]))
    acc = float(np.mean(np.argmax(scores, axis=1) == np.asarray(y)))
    return ce, acc


def train_infinite(dataset, config):
    """Fit coefficient paths and readout through the unrolled integrator.

    dataset: dict with x_train, y_train and optional x_test, y_test.
    config keys (all optional unless noted): dim (state dimension,
    default 10), max_frequency (F, default 5), mu (penalty weight,
    default 0.1), epochs (default 150), lr (default 0.05), gamma
    (default 1.0), steps (grid steps, default 16), t0/T (default 0/1),
    seed (default 0), anchor_refresh (epochs between refreshes, default
    1), eval_every (test metrics cadence, default 1), hist_bins
    (coefficient histogram bins, default 16).

    Anchors are the training samples' trajectories: they start at the
    constant encoded paths (the stable state for c = 0) and are refreshed
    to the current stable states on the given cadence.  The objective is
    mean cross-entropy plus mu times the quadrature norm surrogate.
    Returns (params, history); history rows carry losses, accuracy, and a
    histogram of the coefficient values.
    """
    x_train = np.asarray(dataset["x_train"], dtype=np.float64)
    y_train = np.asarray(dataset["y_train"], dtype=np.int64)
    x_test = dataset.get("x_test")
    y_test = dataset.get("y_test")

    dim = int(config.get("dim", 10))
    max_freq = int(config.get("max_frequency", 5))
    mu = float(config.get("mu", 0.1))
    epochs = int(config.get("epochs", 150))
    lr = float(config.get("lr", 0.05))
    gamma = float(config.get("gamma", 1.0))
    steps = int(config.get("steps", 16))
    t0 = float(config.get("t0", 0.0))
    T = float(config.get("T", 1.0))
    seed = int(config.get("seed", 0))
    refresh = int(config.get("anchor_refresh", 1))
    eval_every = int(config.get("eval_every", 1))
    hist_bins = int(config.get("hist_bins", 16))

    rng = np.random.default_rng(seed)
    grid = TimeGrid(t0=t0, T=T, steps=steps)
    filt = ContinuousFiltration(grid=grid, dim=dim)
    n_classes = int(np.max(y_train)) + 1
    feat = x_train.shape[1]
    encoder = None
    if feat > dim:
        encoder = rng.normal(size=(dim, feat)) / np.sqrt(feat)

    points = np.stack([encode_vector(s, filt, encoder) for s in x_train])
    m = len(points)
    q_basis = 2 * max_freq + 1

    coeffs = FourierCoefficients(values=np.zeros((m, dim, q_basis)), t0=t0, T=T)
    params = InfiniteMachineParams(
        filtration=filt, anchors=np.tile(points[:, None, :], (1, steps + 1, 1)),
        coefficients=coeffs, gamma=gamma, encoder=encoder,
        readout_weights=rng.uniform(-1, 1, size=(n_classes, dim)) / np.sqrt(dim),
        readout_bias=np.zeros(n_classes))

    cf = ad.parameter(_coeff_matrix(params.coefficients))
    w = ad.parameter(params.readout_weights.copy())
    b = ad.parameter(params.readout_bias.copy())
    state = adam_init([cf, w, b])

    basis_half = fourier_basis(grid.half_nodes, t0, T, max_freq)
    basis_nodes = fourier_basis(grid.nodes, t0, T, max_freq)
    quad_w = np.full(steps + 1, grid.dt)
    quad_w[0] = quad_w[-1] = 0.5 * grid.dt
    psi_const = ad.constant(points)

    history = []
    gram = kernel_gram(params)
    for epoch in range(1, epochs + 1):
        params.coefficients = _matrix_coeffs(cf.data, m, dim, t0, T)
        params.readout_weights, params.readout_bias = w.data, b.data
        if (epoch - 1) % refresh == 0:
            u_nodes, _ = stable_state_batch(params, points)
            params.anchors = np.ascontiguousarray(u_nodes)
            gram = kernel_gram(params)
        anchors_half, _ = _half_tables(params)

        with ad.Tape() as tape:
            scores = _unrolled_scores(cf, w, b, psi_const, anchors_half,
                                      basis_half, gamma, grid, m, dim)
            loss = _cross_entropy(scores, y_train)
            obj = loss
            if mu > 0:
                penalty = _rkhs_surrogate_tape(cf, gram, basis_nodes, quad_w, m, dim)
                obj = ad.add(obj, ad.scale(penalty, mu))
        if not np.isfinite(float(obj.data)):
            raise NonFinite(f"objective diverged at epoch {epoch}")
        grads = ad.backward(tape, obj)
        adam_step([cf, w, b], grads, state, lr=lr)

        record = {
            "epoch": epoch,
            "train_loss": float(loss.data),
            "objective": float(obj.data),
            "accuracy": float(np.mean(np.argmax(scores.data, axis=1) == y_train)),
        }
        counts, edges = np.histogram(cf.data, bins=hist_bins)
        record["coeff_hist"] = {"counts": counts.tolist(), "edges": edges.tolist()}
        if x_test is not None and (epoch % eval_every == 0 or epoch == epochs):
            params.coefficients = _matrix_coeffs(cf.data, m, dim, t0, T)
            params.readout_weights, params.readout_bias = w.data, b.data
            record["test_loss"], record["test_accuracy"] = evaluate(
                params, x_test, y_test, embedding=encoder)
        history.append(record)

    params.coefficients = _matrix_coeffs(cf.data, m, dim, t0, T)
    params.readout_weights, params.readout_bias = w.data, b.data
    return params, history


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

PARAMS_SCHEMA = "endokit-infinite-machine/1"


def params_to_json(params):
    """Machine parameters as a schema-tagged JSON string."""
    grid = params.filtration.grid
    return json.dumps({
        "schema": PARAMS_SCHEMA,
        "grid": {"t0": grid.t0, "T": grid.T, "steps": grid.steps},
        "dim": params.filtration.dim,
        "gamma": params.gamma,
        "anchors": params.anchors.tolist(),
        "coefficients": params.coefficients.values.tolist(),
        "encoder": None if params.encoder is None else params.encoder.tolist(),
        "readout_weights": (None if params.readout_weights is None
                            else params.readout_weights.tolist()),
        "readout_bias": (None if params.readout_bias is None
                         else params.readout_bias.tolist()),
    }, sort_keys=True, indent=2)


def params_from_json(text):
    """Rebuild machine parameters from params_to_json output."""
    blob = json.loads(text)
    if blob.get("schema") != PARAMS_SCHEMA:
        raise ValueError(f"unknown schema {blob.get('schema')!r}")
    grid = TimeGrid(t0=blob["grid"]["t0"], T=blob["grid"]["T"],
                    steps=blob["grid"]["steps"])
    filt = ContinuousFiltration(grid=grid, dim=blob["dim"])
    coeffs = FourierCoefficients(values=np.array(blob["coefficients"]),
                                 t0=grid.t0, T=grid.T)
    opt = lambda key: None if blob[key] is None else np.array(blob[key])
    return InfiniteMachineParams(
        filtration=filt, anchors=np.array(blob["anchors"]),
        coefficients=coeffs, gamma=blob["gamma"], encoder=opt("encoder"),
        readout_weights=opt("readout_weights"), readout_bias=opt("readout_bias"))

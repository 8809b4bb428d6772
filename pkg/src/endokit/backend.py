"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Every kernel here exists twice: a vectorized numpy implementation and a
numba ``@njit`` version of the same arithmetic.  Which one the package
uses is decided once, at import time, by the ``ENDOKIT_BACKEND``
environment variable:

    ENDOKIT_BACKEND=numba   force the jitted kernels (error if numba is absent)
    ENDOKIT_BACKEND=numpy   force the numpy fallback
    unset / "auto"          numba when importable, numpy otherwise

``benchmarks/bench_backends.py`` times the two implementations against
each other; see README for representative numbers.
"""

import math
import os

import numpy as np


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _pairwise_sq_dists_np(a, b):
    """Squared Euclidean distances between rows of a (p,d) and b (q,d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    out = aa + bb - 2.0 * (a @ b.T)
    np.maximum(out, 0.0, out=out)
    return out


def _rbf_gram_np(a, b, gamma):
    """exp(-gamma * squared distance) between rows of a and b."""
    return np.exp(-gamma * _pairwise_sq_dists_np(a, b))


def _prefix_rbf_grams_np(a, b, boundaries, gamma):
    """RBF grams over growing coordinate prefixes.

    boundaries is the non-decreasing array (d_0, ..., d_L); output level i
    is the gram computed on the first boundaries[i] coordinates only.
    Level 0 with d_0 = 0 is the constant-1 gram.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    levels = len(boundaries) - 1
    out = np.empty((levels, a.shape[0], b.shape[0]))
    sq = np.zeros((a.shape[0], b.shape[0]))
    prev = 0
    for i in range(levels):
        d = int(boundaries[i])
        if d > prev:
            sq = sq + _pairwise_sq_dists_np(a[:, prev:d], b[:, prev:d])
            prev = d
        out[i] = np.exp(-gamma * sq)
    return out


def _ckm_forward_np(psi, anchors_half, coeffs_half, gamma, h):
    """Batched RK4 sweep of the separable RBF system.

    psi          (B, n)        constant-in-time initial data per sample
    anchors_half (2T+1, m, n)  anchor trajectories sampled at half-steps
    coeffs_half  (2T+1, m, n)  coefficient functions sampled at half-steps
    h            node spacing of the underlying T-step grid

    The state z (B, m) integrates dz_j/dt = exp(-gamma*|u - x_j(t)|^2)
    with u(t) = psi + z @ c(t).  Returns (u_nodes (B,T+1,n),
    z_nodes (B,T+1,m)).
    """
    psi = np.asarray(psi, dtype=np.float64)
    nb, n = psi.shape
    n_half = anchors_half.shape[0]
    steps = (n_half - 1) // 2
    m = anchors_half.shape[1]

    def rate(z, idx):
        u = psi + z @ coeffs_half[idx]
        d = u[:, None, :] - anchors_half[idx][None, :, :]
        return np.exp(-gamma * np.sum(d * d, axis=2))

    z = np.zeros((nb, m))
    u_nodes = np.empty((nb, steps + 1, n))
    z_nodes = np.empty((nb, steps + 1, m))
    u_nodes[:, 0] = psi + z @ coeffs_half[0]
    z_nodes[:, 0] = z
    for i in range(steps):
        k1 = rate(z, 2 * i)
        k2 = rate(z + 0.5 * h * k1, 2 * i + 1)
        k3 = rate(z + 0.5 * h * k2, 2 * i + 1)
        k4 = rate(z + h * k3, 2 * i + 2)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u_nodes[:, i + 1] = psi + z @ coeffs_half[2 * i + 2]
        z_nodes[:, i + 1] = z
    return u_nodes, z_nodes


NUMPY_IMPL = {
    "pairwise_sq_dists": _pairwise_sq_dists_np,
    "rbf_gram": _rbf_gram_np,
    "prefix_rbf_grams": _prefix_rbf_grams_np,
    "ckm_forward": _ckm_forward_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impl():
    from numba import njit

    @njit(cache=True)
    def pairwise_sq_dists(a, b):
        p, d = a.shape
        q = b.shape[0]
        out = np.empty((p, q))
        for i in range(p):
            for j in range(q):
                acc = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    acc += diff * diff
                out[i, j] = acc
        return out

    @njit(cache=True)
    def rbf_gram(a, b, gamma):
        p = a.shape[0]
        q = b.shape[0]
        d = a.shape[1]
        out = np.empty((p, q))
        for i in range(p):
            for j in range(q):
                acc = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    acc += diff * diff
                out[i, j] = math.exp(-gamma * acc)
        return out

    @njit(cache=True)
    def prefix_rbf_grams(a, b, boundaries, gamma):
        levels = boundaries.shape[0] - 1
        p = a.shape[0]
        q = b.shape[0]
        out = np.empty((levels, p, q))
        for i in range(p):
            for j in range(q):
                acc = 0.0
                prev = 0
                for lev in range(levels):
                    d = boundaries[lev]
                    for k in range(prev, d):
                        diff = a[i, k] - b[j, k]
                        acc += diff * diff
                    prev = d
                    out[lev, i, j] = math.exp(-gamma * acc)
        return out

    @njit(cache=True)
    def _ckm_rate(psi, z, coeffs, anchors, gamma, out):
        nb, m = z.shape
        n = psi.shape[1]
        u = np.empty(n)
        for bi in range(nb):
            for k in range(n):
                acc = psi[bi, k]
                for j in range(m):
                    acc += z[bi, j] * coeffs[j, k]
                u[k] = acc
            for j in range(m):
                acc = 0.0
                for k in range(n):
                    diff = u[k] - anchors[j, k]
                    acc += diff * diff
                out[bi, j] = math.exp(-gamma * acc)

    @njit(cache=True)
    def ckm_forward(psi, anchors_half, coeffs_half, gamma, h):
        nb, n = psi.shape
        n_half = anchors_half.shape[0]
        steps = (n_half - 1) // 2
        m = anchors_half.shape[1]

        z = np.zeros((nb, m))
        u_nodes = np.empty((nb, steps + 1, n))
        z_nodes = np.empty((nb, steps + 1, m))
        k1 = np.empty((nb, m))
        k2 = np.empty((nb, m))
        k3 = np.empty((nb, m))
        k4 = np.empty((nb, m))

        for bi in range(nb):
            for k in range(n):
                u = psi[bi, k]
                for j in range(m):
                    u += z[bi, j] * coeffs_half[0, j, k]
                u_nodes[bi, 0, k] = u
            for j in range(m):
                z_nodes[bi, 0, j] = 0.0

        for i in range(steps):
            _ckm_rate(psi, z, coeffs_half[2 * i], anchors_half[2 * i], gamma, k1)
            _ckm_rate(psi, z + 0.5 * h * k1, coeffs_half[2 * i + 1],
                      anchors_half[2 * i + 1], gamma, k2)
            _ckm_rate(psi, z + 0.5 * h * k2, coeffs_half[2 * i + 1],
                      anchors_half[2 * i + 1], gamma, k3)
            _ckm_rate(psi, z + h * k3, coeffs_half[2 * i + 2],
                      anchors_half[2 * i + 2], gamma, k4)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            for bi in range(nb):
                for k in range(n):
                    u = psi[bi, k]
                    for j in range(m):
                        u += z[bi, j] * coeffs_half[2 * i + 2, j, k]
                    u_nodes[bi, i + 1, k] = u
                for j in range(m):
                    z_nodes[bi, i + 1, j] = z[bi, j]
        return u_nodes, z_nodes

    return {
        "pairwise_sq_dists": pairwise_sq_dists,
        "rbf_gram": rbf_gram,
        "prefix_rbf_grams": prefix_rbf_grams,
        "ckm_forward": ckm_forward,
    }


def _select_backend():
    requested = os.environ.get("ENDOKIT_BACKEND", "auto").strip().lower()
    if requested not in ("auto", "numba", "numpy", ""):
        raise ValueError(f"ENDOKIT_BACKEND must be auto/numba/numpy, got {requested!r}")
    if requested == "numpy":
        return "numpy", NUMPY_IMPL
    try:
        impl = _build_numba_impl()
        return "numba", impl
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", NUMPY_IMPL


BACKEND, _IMPL = _select_backend()

pairwise_sq_dists = _IMPL["pairwise_sq_dists"]
rbf_gram = _IMPL["rbf_gram"]
prefix_rbf_grams = _IMPL["prefix_rbf_grams"]
ckm_forward = _IMPL["ckm_forward"]


def available_backends():
    """All importable implementations, keyed by name (for benchmarks/tests)."""
    impls = {"numpy": NUMPY_IMPL}
    try:
        impls["numba"] = _build_numba_impl()
    except ImportError:
        pass
    return impls

"""Nonlinear Volterra equations of the second kind on uniform time grids.

The equation is u(t) = psi(t) + integral from t0 to t of phi(t, s, u(s)) ds.
Two solvers:

* ``solve_picard`` iterates u <- psi + Quad(phi, u) with trapezoidal
  quadrature on the grid nodes; it works for any kernel but costs one
  O(steps^2) sweep per iteration.
* ``solve_separable`` exploits kernels of the form
  phi(t, s, v) = sum_j B(phi_j(s, v), c_j(t)) with B bilinear: the
  auxiliary states z_j(t) = integral of phi_j(s, u(s)) ds satisfy a
  plain ODE system integrated here by classical RK4, with u recovered
  algebraically as psi + sum_j B(z_j, c_j) wherever needed (including
  half-steps).

``subdivision_count`` gives the interval count that makes each
sub-interval integral operator a contraction for a kernel with
Lipschitz constant lam: the smallest N with N > lam^2 (T - t0)^2.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NonConvergence, NonFinite


@dataclass(frozen=True)
class TimeGrid:
    """Uniform nodes t_i = t0 + (i/steps)(T - t0), i = 0..steps."""

    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("need T > t0")
        if self.steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self):
        return (self.T - self.t0) / self.steps

    @property
    def nodes(self):
        return np.linspace(self.t0, self.T, self.steps + 1)

    @property
    def half_nodes(self):
        """Nodes of the doubled grid (RK4 stage points)."""
        return np.linspace(self.t0, self.T, 2 * self.steps + 1)


@dataclass
class VolterraKernel:
    """phi(t, s, v) on t0 <= s <= t <= T with a Lipschitz constant in v.

    phi takes scalars t, s and a state vector v in R^n.  phi_batch, when
    provided, must accept an array of quadrature times s (K,) with
    states (K, n) and return (K, n); solvers use it to avoid per-node
    python calls.
    """

    phi: Callable
    lipschitz: float = 0.0
    phi_batch: Optional[Callable] = None

    def rows(self, t, s_arr, v_arr):
        if self.phi_batch is not None:
            return np.asarray(self.phi_batch(t, s_arr, v_arr), dtype=np.float64)
        return np.stack([np.atleast_1d(np.asarray(self.phi(t, s, v), dtype=np.float64))
                         for s, v in zip(s_arr, v_arr)])


@dataclass
class SeparableKernel:
    """Kernel sum_j B(phi_j(s, v), c_j(t)) with one shared bilinear map B.

    components: phi_j(s, v) -> U;  coefficients: c_j(t) -> V;
    bilinear: B(u, c) -> R^n.  All components share U and all
    coefficients share V.
    """

    components: tuple
    coefficients: tuple
    bilinear: Callable
    lipschitz: float = 0.0

    def __post_init__(self):
        if len(self.components) != len(self.coefficients):
            raise ValueError("need one coefficient function per component")
        if not self.components:
            raise ValueError("need at least one component")

    @property
    def m(self):
        return len(self.components)

    def combined(self, t, s, v):
        """Evaluate sum_j B(phi_j(s, v), c_j(t)) at one point."""
        total = None
        for comp, coeff in zip(self.components, self.coefficients):
            term = np.atleast_1d(np.asarray(
                self.bilinear(comp(s, v), coeff(t)), dtype=np.float64))
            total = term if total is None else total + term
        return total

    def as_volterra(self):
        """The same kernel as a generic VolterraKernel."""
        return VolterraKernel(phi=self.combined, lipschitz=self.lipschitz)


@dataclass
class VolterraSolution:
    """u at the grid nodes, optional auxiliary z states, and the defect."""

    u: np.ndarray
    residual: float
    z: Optional[np.ndarray] = None


def subdivision_count(lam, t0, T):
    """Smallest integer N with N > lam^2 (T - t0)^2 (contraction split)."""
    if lam < 0:
        raise ValueError("lipschitz constant must be nonnegative")
    if not T > t0:
        raise ValueError("need T > t0")
    return int(np.floor((lam * (T - t0)) ** 2)) + 1


def _sample_nodes(psi, times):
    """Evaluate a callable or resample grid values at the given times."""
    if callable(psi):
        vals = np.stack([np.atleast_1d(np.asarray(psi(t), dtype=np.float64))
                         for t in times])
        return vals
    arr = np.asarray(psi, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _sample_path(psi, grid, times):
    """psi at arbitrary times; grid-sampled arrays are linearly interpolated."""
    if callable(psi):
        return _sample_nodes(psi, times)
    arr = _sample_nodes(psi, grid.nodes)
    if arr.shape[0] != grid.steps + 1:
        raise ValueError(f"grid-sampled psi has {arr.shape[0]} rows, "
                         f"expected {grid.steps + 1}")
    out = np.empty((len(times), arr.shape[1]))
    for c in range(arr.shape[1]):
        out[:, c] = np.interp(times, grid.nodes, arr[:, c])
    return out


def apply_integral(k, grid, u_values):
    """Trapezoidal Quad(phi(t_i, ., u(.)), [t0, t_i]) for every node t_i.

    u_values has one state row per node.  Row i of the result integrates
    over nodes 0..i; row 0 is zero.
    """
    nodes = grid.nodes
    n_nodes, n = u_values.shape
    out = np.zeros((n_nodes, n))
    dt = grid.dt
    for i in range(1, n_nodes):
        rows = k.rows(nodes[i], nodes[:i + 1], u_values[:i + 1])
        w = np.full(i + 1, dt)
        w[0] = w[-1] = 0.5 * dt
        out[i] = w @ rows
    return out


def solve_picard(k, psi, grid, tol=1e-8, max_iter=10_000):
    """Iterate u <- psi + Quad(phi, u) until iterates and defect settle.

    Stops when both the sup-norm change between sweeps and the
    trapezoidal residual drop to tol; raises NonConvergence otherwise.
    The result solves the discretized equation; how well that tracks the
    continuous one is the quadrature error, which the caller controls
    through the grid resolution.
    """
    psi_nodes = _sample_nodes(psi, grid.nodes)
    if psi_nodes.shape[0] != grid.steps + 1:
        raise ValueError(f"psi has {psi_nodes.shape[0]} rows, expected {grid.steps + 1}")
    u = psi_nodes.copy()
    qu = apply_integral(k, grid, u)
    for _ in range(max_iter):
        u_next = psi_nodes + qu
        change = float(np.max(np.linalg.norm(u_next - u, axis=1)))
        qu_next = apply_integral(k, grid, u_next)
        res = float(np.max(np.linalg.norm(u_next - psi_nodes - qu_next, axis=1)))
        u, qu = u_next, qu_next
        if change <= tol and res <= tol:
            return VolterraSolution(u=u, residual=res)
    raise NonConvergence(max_iter, res)


def residual(k, psi, sol, grid):
    """Max node defect ||u(t_i) - psi(t_i) - Quad(phi(t_i,.,u), [t0,t_i])||."""
    if isinstance(k, SeparableKernel):
        k = k.as_volterra()
    psi_nodes = _sample_nodes(psi, grid.nodes)
    q = apply_integral(k, grid, sol.u)
    return float(np.max(np.linalg.norm(sol.u - psi_nodes - q, axis=1)))


def rk4_step(f, t, y, h):
    """Classical 4-stage Runge-Kutta update for dy/dt = f(t, y)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    y = np.asarray(y, dtype=np.float64)
    k1 = np.asarray(f(t, y), dtype=np.float64)
    k2 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k1), dtype=np.float64)
    k3 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k2), dtype=np.float64)
    k4 = np.asarray(f(t + h, y + h * k3), dtype=np.float64)
    y_next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y_next)):
        raise NonFinite(f"RK4 state became non-finite at t = {t + h}")
    return y_next


def solve_separable(k, psi, grid):
    """Integrate the separable kernel's equivalent ODE system with RK4.

    States z_j solve dz_j/dt = phi_j(t, u(t)) from z_j(t0) = 0, where
    u(t) = psi(t) + sum_j B(z_j(t), c_j(t)) is evaluated algebraically
    at full and half steps alike (psi is linearly interpolated at half
    steps when it comes grid-sampled).  Raises NonFinite if the
    integration blows up.
    """
    half_times = grid.half_nodes
    psi_half = _sample_path(psi, grid, half_times)
    n = psi_half.shape[1]
    m = k.m

    # coefficient values at every half node, kept as python lists since
    # the value space V is whatever the caller's bilinear map expects
    coeff_half = [[np.asarray(c(t), dtype=np.float64) for t in half_times]
                  for c in k.coefficients]

    def u_of(z, idx):
        u = psi_half[idx].copy()
        for j in range(m):
            u = u + np.atleast_1d(np.asarray(
                k.bilinear(z[j], coeff_half[j][idx]), dtype=np.float64))
        return u

    def deriv(z, idx):
        u = u_of(z, idx)
        t = half_times[idx]
        return [np.atleast_1d(np.asarray(comp(t, u), dtype=np.float64))
                for comp in k.components]

    # With z = 0 the algebraic relation gives u(t0) = psi(t0) exactly, so
    # the component shapes (the space U) can be probed before any z exists.
    u0 = psi_half[0]
    probe = [np.atleast_1d(np.asarray(comp(half_times[0], u0), dtype=np.float64))
             for comp in k.components]
    if len({p.shape for p in probe}) != 1:
        raise ValueError("all components must map into one shared space U")
    z = [np.zeros_like(p) for p in probe]

    h = grid.dt
    u_nodes = np.empty((grid.steps + 1, n))
    z_nodes = np.empty((grid.steps + 1, m) + z[0].shape)
    u_nodes[0] = u_of(z, 0)
    for j in range(m):
        z_nodes[0, j] = z[j]

    for i in range(grid.steps):
        k1 = deriv(z, 2 * i)
        k2 = deriv([z[j] + 0.5 * h * k1[j] for j in range(m)], 2 * i + 1)
        k3 = deriv([z[j] + 0.5 * h * k2[j] for j in range(m)], 2 * i + 1)
        k4 = deriv([z[j] + h * k3[j] for j in range(m)], 2 * i + 2)
        z = [z[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
             for j in range(m)]
        for j in range(m):
            if not np.all(np.isfinite(z[j])):
                raise NonFinite(f"separable solve became non-finite at step {i + 1}")
            z_nodes[i + 1, j] = z[j]
        u_nodes[i + 1] = u_of(z, 2 * i + 2)

    sol = VolterraSolution(u=u_nodes, residual=0.0, z=z_nodes)
    sol.residual = residual(k, psi, sol, grid)
    return sol


# ---------------------------------------------------------------------------
# discrete L2 helpers
# ---------------------------------------------------------------------------

def l2_norm(values, grid):
    """Trapezoidal L2([t0, T]) norm of a state path sampled on the nodes."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    sq = np.sum(values * values, axis=1)
    w = np.full(len(sq), grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    return float(np.sqrt(w @ sq))


def l2_dist(a, b, grid):
    """Trapezoidal L2 distance between two node-sampled state paths."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    return l2_norm(a - b, grid)

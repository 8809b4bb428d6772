"""Endofunctions on R^n, their stable states, and dependency layering.

A machine is a map f: R^n -> R^n for which feeding an input g means
solving the fixed-point equation h = g + f(h); the solution is the
stable state.  ``stable_state_picard`` iterates h <- g + f(h) from
h = g.  When f splits into a finite set of machines whose dependency
graph is acyclic, a single sweep over the graph's layers reaches the
stable state with no iteration (``stable_state_layered``).

Dependencies are detected behaviourally: f is independent of f' when
adding any multiple of an f'-output to the input never changes f's
output.  ``build_dependency_graph`` samples that check over a probe
set (a cheap necessary condition, not a proof), and ``compute_layering``
turns the resulting DAG into the minimal-height layer decomposition
(layer of a node = longest directed path ending there).
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CyclicDependency, NonConvergence, ShapeMismatch

INFINITE_DEPTH = math.inf


@dataclass
class Machine:
    """An endofunction on R^dim.

    square_zero marks maps that ignore their own output (adding any
    f-output to the input leaves f unchanged); such machines stabilize
    in one application.  lipschitz_hint is advisory metadata only.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    dim: int
    square_zero: bool = False
    lipschitz_hint: Optional[float] = None
    name: str = ""

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ShapeMismatch(
                f"machine {self.name or '?'} expects shape ({self.dim},), got {x.shape}")
        return np.asarray(self.apply(x), dtype=np.float64)


@dataclass
class StableState:
    """Solution of h = g + f(h) plus how it was obtained."""

    value: np.ndarray
    iterations: int
    residual: float


@dataclass
class DependencyGraph:
    """Directed graph on machine indices; edge (i, j) means j depends on i."""

    node_count: int
    edges: tuple = ()

    def __post_init__(self):
        self.edges = tuple(sorted(set((int(i), int(j)) for i, j in self.edges)))
        for i, j in self.edges:
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"edge ({i}, {j}) outside 0..{self.node_count - 1}")

    @property
    def nodes(self):
        return tuple(range(self.node_count))

    def successors(self, i):
        return tuple(b for a, b in self.edges if a == i)

    def predecessors(self, j):
        return tuple(a for a, b in self.edges if b == j)


@dataclass
class Layering:
    """Layer partition of a DAG; every edge goes from a lower to a higher layer."""

    layers: tuple
    height: int


def stable_state_residual(f, g, h):
    """Defect ||h - (g + f(h))|| of a candidate stable state."""
    return float(np.linalg.norm(np.asarray(h) - (np.asarray(g) + f(h))))


def stable_state_picard(f, g, max_iter=10_000, tol=1e-8):
    """Iterate h <- g + f(h) from h = g until the residual drops below tol.

    Raises NonConvergence when max_iter iterations do not get the
    residual ||h - g - f(h)|| down to tol; that usually means f is not a
    machine for this input or the tolerance is too tight.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    g = np.asarray(g, dtype=np.float64)
    h = g.copy()
    fh = f(h)
    residual = float(np.linalg.norm(fh))
    for it in range(1, max_iter + 1):
        h = g + fh
        fh = f(h)
        residual = float(np.linalg.norm(h - g - fh))
        if residual <= tol:
            return StableState(value=h, iterations=it, residual=residual)
    raise NonConvergence(max_iter, residual)


def machine_depth(f, probes, max_iter=10_000, tol=1e-8):
    """Smallest n where one more Picard step moves no probe by more than tol.

    Runs h_0 = g, h_{n+1} = g + f(h_n) for every probe input g in
    lockstep; returns the first n with max_g ||h_{n+1} - h_n|| <= tol,
    or INFINITE_DEPTH if max_iter steps never settle.  Depth 0 means f
    already vanishes on the probes.
    """
    if not probes:
        raise ValueError("need at least one probe input")
    gs = [np.asarray(g, dtype=np.float64) for g in probes]
    hs = [g.copy() for g in gs]
    for n in range(max_iter + 1):
        nxt = [g + f(h) for g, h in zip(gs, hs)]
        worst = max(float(np.linalg.norm(a - b)) for a, b in zip(nxt, hs))
        if worst <= tol:
            return n
        hs = nxt
    return INFINITE_DEPTH


def gaussian_probes(dim, count=8, seed=0, scale=2.0):
    """Deterministic probe inputs: the origin plus `count` gaussian draws."""
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = [np.zeros(dim)]
    for _ in range(count):
        pts.append(scale * rng.standard_normal(dim))
    return pts


def independence_probes(dim, count=32, seed=0, scale=2.0,
                        lambdas=(-1.0, -0.5, 0.5, 1.0)):
    """Deterministic (b, b', lambda) triples for check_independence."""
    rng = np.random.Generator(np.random.PCG64(seed))
    triples = []
    for k in range(count):
        b = scale * rng.standard_normal(dim)
        b_prime = scale * rng.standard_normal(dim)
        triples.append((b, b_prime, lambdas[k % len(lambdas)]))
    return triples


def check_independence(f, f_prime, probes, tol=1e-8):
    """True when f(b + lam * f'(b')) = f(b) for every probe triple.

    Probes are (b, b', lam) triples.  Passing is a sampled necessary
    condition for "f does not depend on f'", not a proof.
    """
    if not probes:
        raise ValueError("need at least one probe triple")
    for b, b_prime, lam in probes:
        base = f(b)
        if float(np.linalg.norm(f(b + lam * f_prime(b_prime)) - base)) > tol:
            return False
    return True


def build_dependency_graph(machines, probes=None, tol=1e-8):
    """Edge (i, j), i != j, whenever machine j fails independence from i."""
    if not machines:
        return DependencyGraph(node_count=0)
    dim = machines[0].dim
    for m in machines:
        if m.dim != dim:
            raise ShapeMismatch("machines must share one state space")
    if probes is None:
        probes = independence_probes(dim)
    edges = []
    for i, src in enumerate(machines):
        for j, dst in enumerate(machines):
            if i != j and not check_independence(dst, src, probes, tol=tol):
                edges.append((i, j))
    return DependencyGraph(node_count=len(machines), edges=tuple(edges))


def compute_layering(graph):
    """Minimal-height layering of a dependency DAG.

    Node v lands in the layer indexed by the longest path (counted in
    edges) ending at v; height = max index + 1.  Raises CyclicDependency
    when the graph has a directed cycle (self-loops included).
    """
    n = graph.node_count
    succs = {v: [] for v in range(n)}
    indeg = {v: 0 for v in range(n)}
    for a, b in graph.edges:
        succs[a].append(b)
        indeg[b] += 1

    depth = {v: 0 for v in range(n)}
    queue = sorted(v for v in range(n) if indeg[v] == 0)
    done = 0
    while queue:
        v = queue.pop(0)
        done += 1
        for w in sorted(succs[v]):
            depth[w] = max(depth[w], depth[v] + 1)
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
        queue.sort()
    if done != n:
        stuck = sorted(v for v in range(n) if indeg[v] > 0)
        raise CyclicDependency(f"dependency cycle through nodes {stuck}")

    if n == 0:
        return Layering(layers=(), height=0)
    height = max(depth.values()) + 1
    layers = tuple(tuple(v for v in range(n) if depth[v] == i) for i in range(height))
    return Layering(layers=layers, height=height)


def total_machine(machines):
    """The sum machine x -> sum_j f_j(x) on the shared state space."""
    dim = machines[0].dim

    def apply(x):
        acc = np.zeros(dim)
        for m in machines:
            acc += m(x)
        return acc

    return Machine(apply=apply, dim=dim, name="+".join(m.name or "?" for m in machines))


def stable_state_layered(machines, layering, g, max_iter=10_000, tol=1e-8):
    """Stable state of the sum machine by one sweep over dependency layers.

    Each layer applies id + sum of its members' single-machine settling
    maps: a square-zero machine contributes f(h) directly, anything else
    contributes its own Picard stable state minus the input (and may
    raise NonConvergence).  Layers must come from the machines'
    dependency graph for the sweep to land on the true stable state.
    """
    g = np.asarray(g, dtype=np.float64)
    h = g.copy()
    for layer in layering.layers:
        update = np.zeros_like(h)
        for j in layer:
            m = machines[j]
            if m.square_zero:
                update += m(h)
            else:
                update += stable_state_picard(m, h, max_iter=max_iter, tol=tol).value - h
        h = h + update
    residual = stable_state_residual(total_machine(machines), g, h)
    return StableState(value=h, iterations=layering.height, residual=residual)


def stable_state_for(machines, g, probes=None, tol=1e-8):
    """Convenience wrapper: probe dependencies, layer, and sweep in one call."""
    graph = build_dependency_graph(machines, probes=probes)
    layering = compute_layering(graph)
    return stable_state_layered(machines, layering, g, tol=tol)


# ---------------------------------------------------------------------------
# structured machine constructors
# ---------------------------------------------------------------------------

def coordinate_machine(dim, reads, writes, fn, name=""):
    """Machine that reads coords `reads`, writes fn(x[reads]) into `writes`.

    Output is zero outside `writes`.  With reads and writes disjoint the
    machine ignores its own output, so it is square-zero.
    """
    reads = tuple(sorted(int(r) for r in reads))
    writes = tuple(sorted(int(w) for w in writes))
    for c in reads + writes:
        if not 0 <= c < dim:
            raise ValueError(f"coordinate {c} outside 0..{dim - 1}")

    def apply(x):
        out = np.zeros(dim)
        vals = np.asarray(fn(x[list(reads)] if reads else np.zeros(0)), dtype=np.float64)
        if vals.shape != (len(writes),):
            raise ShapeMismatch(f"inner map returned shape {vals.shape}, expected ({len(writes)},)")
        out[list(writes)] = vals
        return out

    m = Machine(apply=apply, dim=dim, square_zero=not set(reads) & set(writes), name=name)
    m.reads = reads
    m.writes = writes
    return m


def random_square_zero_set(dim, count, rng):
    """Random machines with disjoint write blocks and backward-only reads.

    Machine j writes a private coordinate block and reads, through a tanh
    layer, only from blocks of machines earlier in a random order (or
    from never-written coords).  Every machine is therefore independent
    of itself and of all later machines, so the set is square-zero with
    an acyclic dependency graph.
    """
    if count > dim:
        raise ValueError("need at least one private write coordinate per machine")
    coords = list(rng.permutation(dim))
    writes = []
    pool = dim - count
    for j in range(count):
        extra = int(rng.integers(0, pool + 1)) if pool > 0 else 0
        take = 1 + min(extra, pool)
        pool -= take - 1
        writes.append(sorted(coords[:take]))
        coords = coords[take:]
    free = sorted(coords)

    machines = []
    order = list(rng.permutation(count))
    for rank, j in enumerate(order):
        readable = sorted(c for r in order[:rank] for c in writes[r]) + free
        if readable:
            k = int(rng.integers(0, len(readable) + 1))
            reads = sorted(rng.choice(readable, size=k, replace=False)) if k else []
        else:
            reads = []
        w = writes[j]
        a = rng.standard_normal((len(w), len(reads)))
        b = rng.standard_normal(len(w))

        def inner(v, a=a, b=b):
            return np.tanh(a @ v + b)

        machines.append((j, coordinate_machine(dim, reads, w, inner, name=f"m{j}")))
    machines.sort(key=lambda t: t[0])
    return [m for _, m in machines]

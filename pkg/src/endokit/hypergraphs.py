"""Directed hypergraphs and their machine representations.

A hypergraph here is a set of vertices, each carrying a state dimension,
plus hyperedges (S, T) whose source and target vertex sets may overlap.
Its line graph has one node per hyperedge and an arc E1 -> E2 whenever
t(E1) meets s(E2); the hypergraph is acyclic exactly when that line
graph (self-loops included) is.

A representation equips every hyperedge with an affine map from the
concatenated source states, split across the targets, with each target
vertex's fixed activation applied to its slice.  Running the network
means computing the stable state of the summed edge endofunctions on
the direct sum of all vertex spaces; because the line graph layering
bounds the dependency structure, one layered sweep suffices
(``hypergraph_forward``).  ``forward_batch`` is the same sweep on
batched autodiff tensors for training.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import CyclicDependency, DimMismatch, ShapeMismatch
from .machines import (
    DependencyGraph,
    Machine,
    compute_layering,
    coordinate_machine,
    stable_state_layered,
)

POINTWISE_ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")
RESAMPLE_ACTIVATIONS = ("avg_pool", "upsample")
ACTIVATIONS = POINTWISE_ACTIVATIONS + RESAMPLE_ACTIVATIONS


@dataclass(frozen=True)
class Hyperedge:
    """Source and target vertex name sets; the two may overlap."""

    sources: tuple
    targets: tuple

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.sources or not self.targets:
            raise ValueError("hyperedge needs at least one source and one target")
        if len(set(self.sources)) != len(self.sources) or len(set(self.targets)) != len(self.targets):
            raise ValueError("repeated vertex within a hyperedge side")


@dataclass
class Hypergraph:
    """Vertices with state dims (insertion order fixes block layout) and edges."""

    vertex_dims: dict
    edges: tuple = ()

    def __post_init__(self):
        self.edges = tuple(self.edges)
        for v, d in self.vertex_dims.items():
            if int(d) <= 0:
                raise ValueError(f"vertex {v!r} needs positive dim, got {d}")
        for e in self.edges:
            for v in e.sources + e.targets:
                if v not in self.vertex_dims:
                    raise ValueError(f"edge uses unknown vertex {v!r}")

    @property
    def vertices(self):
        return tuple(self.vertex_dims)

    def incoming(self, v):
        return tuple(i for i, e in enumerate(self.edges) if v in e.targets)

    def outgoing(self, v):
        return tuple(i for i, e in enumerate(self.edges) if v in e.sources)


def line_graph(h):
    """Dependency graph on hyperedges: arc (i, j) iff t(E_i) meets s(E_j).

    Self-arcs appear when a single edge's target set meets its own
    source set (a length-1 cycle).
    """
    arcs = []
    for i, ei in enumerate(h.edges):
        ti = set(ei.targets)
        for j, ej in enumerate(h.edges):
            if ti & set(ej.sources):
                arcs.append((i, j))
    return DependencyGraph(node_count=len(h.edges), edges=tuple(arcs))


def is_acyclic(h):
    """True iff no hyperpath returns to a source of its first edge.

    Equivalent to the line graph (with self-arcs) having no directed
    cycle, which is what is checked.
    """
    try:
        compute_layering(line_graph(h))
        return True
    except CyclicDependency:
        return False


# ---------------------------------------------------------------------------
# representations
# ---------------------------------------------------------------------------

def _resample_matrix(kind, out_dim, ratio):
    """Fixed linear map realizing avg_pool (k*m -> m) or upsample (m/k -> m)."""
    k = int(ratio)
    if kind == "avg_pool":
        mat = np.zeros((out_dim * k, out_dim))
        for i in range(out_dim):
            mat[i * k:(i + 1) * k, i] = 1.0 / k
        return mat
    if kind == "upsample":
        if out_dim % k:
            raise DimMismatch(f"upsample ratio {k} does not divide dim {out_dim}")
        mat = np.zeros((out_dim // k, out_dim))
        for i in range(out_dim // k):
            mat[i, i * k:(i + 1) * k] = 1.0
        return mat
    raise ValueError(f"unknown resample kind {kind!r}")


def _affine_width(dim, activation, ratio):
    """Output width the edge's affine map must produce for one target vertex."""
    if activation == "avg_pool":
        return dim * int(ratio)
    if activation == "upsample":
        if dim % int(ratio):
            raise DimMismatch(f"upsample ratio {ratio} does not divide dim {dim}")
        return dim // int(ratio)
    return dim


def _act_array(name, x, ratio, out_dim):
    if name == "identity":
        return x
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    if name in RESAMPLE_ACTIVATIONS:
        return x @ _resample_matrix(name, out_dim, ratio)
    raise ValueError(f"unknown activation {name!r}")


def _act_tensor(name, x, ratio, out_dim):
    if name == "identity":
        return x
    if name == "relu":
        return ad.relu(x)
    if name == "tanh":
        return ad.tanh(x)
    if name == "sigmoid":
        return ad.sigmoid(x)
    if name in RESAMPLE_ACTIVATIONS:
        return ad.matmul(x, ad.constant(_resample_matrix(name, out_dim, ratio)))
    raise ValueError(f"unknown activation {name!r}")


class HypergraphRepresentation:
    """Per-edge affine maps plus per-vertex activations on a hypergraph.

    Edge weights live in autodiff tensors so the same object serves
    inference and training.  Construction rejects cyclic hypergraphs and
    precomputes the block layout and the line-graph layering.
    """

    def __init__(self, graph, activations=None, ratios=None, seed=0, weights=None):
        self.graph = graph
        self.activations = {v: "identity" for v in graph.vertices}
        self.activations.update(activations or {})
        self.ratios = dict(ratios or {})
        for v, a in self.activations.items():
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r} on vertex {v!r}")
            if a in RESAMPLE_ACTIVATIONS and v not in self.ratios:
                raise ValueError(f"vertex {v!r} with {a} needs a declared ratio")

        self.offsets = {}
        total = 0
        for v in graph.vertices:
            self.offsets[v] = total
            total += graph.vertex_dims[v]
        self.total_dim = total

        lg = line_graph(graph)
        self.layering = compute_layering(lg)  # raises CyclicDependency when cyclic
        self.line = lg

        # Canonical per-edge layout: sources and targets processed in the
        # graph's vertex order, which fixes the weight matrix row/column
        # convention regardless of how the hyperedge listed them.
        self.edge_layout = []
        order = {v: i for i, v in enumerate(graph.vertices)}
        for e in graph.edges:
            srcs = tuple(sorted(e.sources, key=order.get))
            tgts = tuple(sorted(e.targets, key=order.get))
            spans = []
            col = 0
            for v in tgts:
                width = self._target_width(v)
                spans.append((v, col, col + width))
                col += width
            self.edge_layout.append({
                "sources": srcs,
                "targets": tgts,
                "spans": tuple(spans),
                "in_dim": sum(graph.vertex_dims[v] for v in srcs),
                "out_dim": col,
            })

        if weights is None:
            rng = np.random.Generator(np.random.PCG64(seed))
            weights = []
            for lay in self.edge_layout:
                bound = 1.0 / np.sqrt(lay["in_dim"])
                weights.append({
                    "w": ad.parameter(rng.uniform(-bound, bound, size=(lay["in_dim"], lay["out_dim"]))),
                    "b": ad.parameter(rng.uniform(-bound, bound, size=lay["out_dim"])),
                })
        self.weights = weights

    def _target_width(self, v):
        return _affine_width(self.graph.vertex_dims[v],
                             self.activations[v], self.ratios.get(v))

    def vertex_slice(self, v):
        off = self.offsets[v]
        return slice(off, off + self.graph.vertex_dims[v])

    def block(self, state, v):
        """The vertex-v block of a flat direct-sum state vector."""
        return state[self.vertex_slice(v)]

    def input_vertices(self):
        """Vertices with no incoming hyperedge."""
        return tuple(v for v in self.graph.vertices if not self.graph.incoming(v))

    def edge_params(self):
        """Flat list of all weight tensors, edge-major."""
        out = []
        for wb in self.weights:
            out.extend((wb["w"], wb["b"]))
        return out


def edge_machines(rep):
    """Each hyperedge as an endofunction on the direct sum of vertex spaces.

    The machine reads the concatenated source blocks, applies the edge's
    affine map, splits per target, applies target activations, and
    writes into the target blocks.  Together they make
    ``hypergraph_forward`` a machine-core stable-state problem.
    """
    g = rep.graph
    machines = []
    for idx in range(len(g.edges)):
        lay = rep.edge_layout[idx]
        reads = [c for v in lay["sources"]
                 for c in range(rep.offsets[v], rep.offsets[v] + g.vertex_dims[v])]
        writes = [c for v in lay["targets"]
                  for c in range(rep.offsets[v], rep.offsets[v] + g.vertex_dims[v])]
        w = rep.weights[idx]["w"].data
        b = rep.weights[idx]["b"].data

        def inner(x, w=w, b=b, spans=lay["spans"]):
            pre = x @ w + b
            parts = []
            for v, c0, c1 in spans:
                parts.append(_act_array(rep.activations[v], pre[c0:c1],
                                        rep.ratios.get(v), g.vertex_dims[v]))
            return np.concatenate(parts)

        machines.append(coordinate_machine(rep.total_dim, reads, writes, inner,
                                           name=f"e{idx}"))
    return machines


def embed_input(rep, inputs):
    """Flat direct-sum vector with the given per-vertex blocks, zero elsewhere."""
    g = np.zeros(rep.total_dim)
    for v, arr in inputs.items():
        if v not in rep.graph.vertex_dims:
            raise ValueError(f"unknown input vertex {v!r}")
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (rep.graph.vertex_dims[v],):
            raise ShapeMismatch(
                f"input for {v!r} has shape {arr.shape}, expected ({rep.graph.vertex_dims[v]},)")
        g[rep.vertex_slice(v)] = arr
    return g


def hypergraph_forward(rep, inputs):
    """Full network state for the given input assignment.

    inputs maps vertex names to their external state blocks (vertices
    with no incoming edge should be assigned; anything unassigned
    defaults to zero).  Returns the flat stable state on the direct sum
    of all vertex spaces, computed by one layered sweep over the line
    graph.  An incoming edge's output adds to whatever external input
    the target vertex carries.
    """
    g = embed_input(rep, inputs)
    machines = edge_machines(rep)
    return stable_state_layered(machines, rep.layering, g).value


def forward_batch(rep, inputs):
    """Batched tape-friendly forward pass; returns per-vertex state tensors.

    inputs maps vertex names to (batch, dim) arrays or tensors.  Runs
    the same layered sweep as ``hypergraph_forward`` with autodiff ops,
    so gradients flow to the edge weight tensors when a Tape is active.
    """
    g = rep.graph
    batch = None
    states = {}
    for v, x in inputs.items():
        t = x if isinstance(x, ad.Tensor) else ad.constant(np.asarray(x, dtype=np.float64))
        if t.data.ndim != 2 or t.data.shape[1] != g.vertex_dims[v]:
            raise ShapeMismatch(f"input for {v!r} has shape {t.data.shape}, "
                                f"expected (batch, {g.vertex_dims[v]})")
        if batch is None:
            batch = t.data.shape[0]
        elif t.data.shape[0] != batch:
            raise ShapeMismatch("inconsistent batch sizes across input vertices")
        states[v] = t
    if batch is None:
        raise ValueError("need at least one input vertex")
    for v in g.vertices:
        if v not in states:
            states[v] = ad.constant(np.zeros((batch, g.vertex_dims[v])))

    for layer in rep.layering.layers:
        contribs = []
        for idx in layer:
            lay = rep.edge_layout[idx]
            srcs = [states[v] for v in lay["sources"]]
            x = srcs[0] if len(srcs) == 1 else ad.concat(srcs, axis=-1)
            pre = ad.add(ad.matmul(x, rep.weights[idx]["w"]), rep.weights[idx]["b"])
            for v, c0, c1 in lay["spans"]:
                part = ad.slice_block(pre, c0, c1, axis=-1)
                contribs.append((v, _act_tensor(rep.activations[v], part,
                                                rep.ratios.get(v), g.vertex_dims[v])))
        for v, out in contribs:
            states[v] = ad.add(states[v], out)
    return states


def maximal_connectivity(specs, pool_ratios=()):
    """Hypergraph with every dimension-compatible forward connection.

    specs is an ordered list of (name, dim) pairs; the last entry is the
    output vertex.  Vertex i gains an edge to every later vertex j when
    their dims are equal or differ by a declared pool/upsample ratio,
    and every vertex additionally gets a dense edge straight to the
    output regardless of dims.
    """
    names = [s[0] for s in specs]
    dims = {s[0]: int(s[1]) for s in specs}
    if len(set(names)) != len(names):
        raise ValueError("duplicate vertex names")
    ratios = set(int(r) for r in pool_ratios)
    out = names[-1]
    edges = []
    seen = set()

    def put(a, b):
        if (a, b) not in seen:
            seen.add((a, b))
            edges.append(Hyperedge((a,), (b,)))

    for i, a in enumerate(names[:-1]):
        for b in names[i + 1:-1]:
            da, db = dims[a], dims[b]
            compatible = da == db
            if not compatible and da > db and da % db == 0 and da // db in ratios:
                compatible = True
            if not compatible and db > da and db % da == 0 and db // da in ratios:
                compatible = True
            if compatible:
                put(a, b)
        put(a, out)
    return Hypergraph(vertex_dims=dims, edges=tuple(edges))

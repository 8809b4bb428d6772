"""Hypergraph structure, line graphs, and representation forward passes."""

import numpy as np
import pytest

import endokit.autodiff as ad
import endokit.hypergraphs as hg
import endokit.machines as mc
from endokit.errors import CyclicDependency, DimMismatch, ShapeMismatch


def diamond():
    """in -> {a, b} -> out with one extra skip edge in -> out."""
    return hg.Hypergraph(
        vertex_dims={"in": 3, "a": 4, "b": 4, "out": 2},
        edges=(hg.Hyperedge(("in",), ("a",)),
               hg.Hyperedge(("in",), ("b",)),
               hg.Hyperedge(("a", "b"), ("out",)),
               hg.Hyperedge(("in",), ("out",))))


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

def test_hyperedge_validation():
    with pytest.raises(ValueError):
        hg.Hyperedge((), ("a",))
    with pytest.raises(ValueError):
        hg.Hyperedge(("a", "a"), ("b",))


def test_hypergraph_validation():
    with pytest.raises(ValueError):
        hg.Hypergraph(vertex_dims={"a": 0})
    with pytest.raises(ValueError):
        hg.Hypergraph(vertex_dims={"a": 2},
                      edges=(hg.Hyperedge(("a",), ("ghost",)),))


def test_line_graph_of_diamond():
    lg = hg.line_graph(diamond())
    # edge 0 (in->a) feeds edge 2 (a,b->out); edge 1 (in->b) feeds edge 2
    assert lg.node_count == 4
    assert set(lg.edges) == {(0, 2), (1, 2)}


def test_line_graph_self_arc_marks_one_edge_cycle():
    h = hg.Hypergraph(vertex_dims={"v": 2},
                      edges=(hg.Hyperedge(("v",), ("v",)),))
    lg = hg.line_graph(h)
    assert (0, 0) in lg.edges
    assert not hg.is_acyclic(h)


def test_acyclicity():
    assert hg.is_acyclic(diamond())
    loop = hg.Hypergraph(
        vertex_dims={"a": 2, "b": 2},
        edges=(hg.Hyperedge(("a",), ("b",)), hg.Hyperedge(("b",), ("a",))))
    assert not hg.is_acyclic(loop)


def test_overlapping_source_target_sets_allowed_when_acyclic():
    # an edge may read and write overlapping vertex sets across different edges
    h = hg.Hypergraph(
        vertex_dims={"x": 2, "y": 2, "z": 2},
        edges=(hg.Hyperedge(("x",), ("y", "z")), hg.Hyperedge(("y",), ("z",))))
    assert hg.is_acyclic(h)
    lg = hg.line_graph(h)
    assert set(lg.edges) == {(0, 1)}


def test_maximal_connectivity_edge_rules():
    h = hg.maximal_connectivity(
        [("in", 8), ("h1", 4), ("h2", 4), ("out", 3)], pool_ratios=(2,))
    pairs = {(e.sources[0], e.targets[0]) for e in h.edges}
    # dims 8 and 4 differ by the declared ratio 2; 4 == 4 matches directly;
    # everything gains a dense edge to the output
    assert pairs == {("in", "h1"), ("in", "h2"), ("h1", "h2"),
                     ("in", "out"), ("h1", "out"), ("h2", "out")}


def test_maximal_connectivity_without_ratios_skips_mismatched_dims():
    h = hg.maximal_connectivity([("in", 8), ("h1", 4), ("out", 3)])
    pairs = {(e.sources[0], e.targets[0]) for e in h.edges}
    assert pairs == {("in", "out"), ("h1", "out")}


def test_maximal_connectivity_rejects_duplicate_names():
    with pytest.raises(ValueError):
        hg.maximal_connectivity([("a", 2), ("a", 2), ("out", 1)])


# ---------------------------------------------------------------------------
# representations
# ---------------------------------------------------------------------------

def test_representation_rejects_cyclic_graph():
    loop = hg.Hypergraph(
        vertex_dims={"a": 2, "b": 2},
        edges=(hg.Hyperedge(("a",), ("b",)), hg.Hyperedge(("b",), ("a",))))
    with pytest.raises(CyclicDependency):
        hg.HypergraphRepresentation(loop)


def test_representation_validates_activations():
    h = diamond()
    with pytest.raises(ValueError):
        hg.HypergraphRepresentation(h, activations={"a": "softplus"})
    with pytest.raises(ValueError):
        hg.HypergraphRepresentation(h, activations={"a": "avg_pool"})  # no ratio


def test_forward_matches_picard_on_edge_machines():
    rep = hg.HypergraphRepresentation(diamond(), activations={"a": "tanh",
                                                              "b": "relu"}, seed=3)
    x = np.random.default_rng(1).normal(size=3)
    state = hg.hypergraph_forward(rep, {"in": x})
    machines = hg.edge_machines(rep)
    g = hg.embed_input(rep, {"in": x})
    picard = mc.stable_state_picard(mc.total_machine(machines), g, tol=1e-12)
    np.testing.assert_allclose(state, picard.value, atol=1e-10)


def test_forward_batch_matches_single_forward():
    rep = hg.HypergraphRepresentation(diamond(), activations={"a": "sigmoid"},
                                      seed=5)
    xs = np.random.default_rng(2).normal(size=(6, 3))
    states = hg.forward_batch(rep, {"in": xs})
    for i, x in enumerate(xs):
        flat = hg.hypergraph_forward(rep, {"in": x})
        for v in rep.graph.vertices:
            np.testing.assert_allclose(states[v].data[i],
                                       flat[rep.vertex_slice(v)], atol=1e-12)


def test_forward_batch_validates_shapes():
    rep = hg.HypergraphRepresentation(diamond(), seed=0)
    with pytest.raises(ShapeMismatch):
        hg.forward_batch(rep, {"in": np.zeros((4, 7))})
    with pytest.raises(ShapeMismatch):
        hg.forward_batch(rep, {"in": np.zeros((4, 3)), "a": np.zeros((5, 4))})
    with pytest.raises(ValueError):
        hg.forward_batch(rep, {})


def test_external_input_adds_to_edge_contributions():
    # a non-source vertex with an external block receives edge output on top
    rep = hg.HypergraphRepresentation(diamond(), seed=1)
    x = np.ones(3)
    extra = np.array([0.5, -0.5, 0.25, 1.0])
    base = hg.hypergraph_forward(rep, {"in": x})
    bumped = hg.hypergraph_forward(rep, {"in": x, "a": extra})
    # vertex a is written by exactly one edge reading only "in"
    np.testing.assert_allclose(bumped[rep.vertex_slice("a")],
                               base[rep.vertex_slice("a")] + extra, atol=1e-12)


def test_avg_pool_and_upsample_blocks():
    h = hg.Hypergraph(vertex_dims={"in": 4, "down": 2, "up": 4},
                      edges=(hg.Hyperedge(("in",), ("down",)),
                             hg.Hyperedge(("down",), ("up",))))
    rep = hg.HypergraphRepresentation(
        h, activations={"down": "avg_pool", "up": "upsample"},
        ratios={"down": 2, "up": 2}, seed=0)
    # avg_pool halves by averaging adjacent pairs of the affine output;
    # upsample repeats each affine output entry twice
    pre_down = np.array([1.0, 3.0, -2.0, 4.0])
    np.testing.assert_allclose(
        pre_down @ hg._resample_matrix("avg_pool", 2, 2), [2.0, 1.0])
    pre_up = np.array([5.0, -1.0])
    np.testing.assert_allclose(
        pre_up @ hg._resample_matrix("upsample", 4, 2), [5.0, 5.0, -1.0, -1.0])
    x = np.random.default_rng(0).normal(size=(3, 4))
    states = hg.forward_batch(rep, {"in": x})
    assert states["down"].data.shape == (3, 2)
    assert states["up"].data.shape == (3, 4)


def test_upsample_rejects_indivisible_ratio():
    with pytest.raises(DimMismatch):
        hg._resample_matrix("upsample", 3, 2)


def test_edge_params_flat_list():
    rep = hg.HypergraphRepresentation(diamond(), seed=0)
    params = rep.edge_params()
    assert len(params) == 2 * len(rep.graph.edges)
    assert all(isinstance(p, ad.Tensor) and p.requires_grad for p in params)


def test_gradients_flow_through_batched_forward():
    rep = hg.HypergraphRepresentation(diamond(), activations={"a": "tanh"}, seed=2)
    x = np.random.default_rng(4).normal(size=(5, 3))

    def loss(_):
        states = hg.forward_batch(rep, {"in": x})
        return ad.squared_norm(states["out"])

    assert ad.grad_check(loss, rep.edge_params()) < 1e-6

"""Architecture search by group-norm pruning on hypergraph representations.

Training adds a cost proportional to the sum of per-edge Euclidean
weight norms to the task loss.  The norm term is handled proximally:
after every optimizer step each edge's parameter group is shrunk by
max(0, 1 - lr * coefficient / ||group||), which is the exact proximal
map of the group norm and lets whole edges reach exactly zero instead
of oscillating near it.  Edges whose norm falls below the tolerance are
then removed outright on the pruning cadence (every epoch after a
5-epoch warmup).
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NonConvergence
from .hypergraphs import (
    Hyperedge,
    Hypergraph,
    HypergraphRepresentation,
    forward_batch,
)
from .optim import adam_init, adam_step


@dataclass
class PruneConfig:
    """Pruning tolerance and the coefficient of the group-norm cost."""

    tolerance: float = 1e-6
    penalty_coefficient: float = 0.0

    def __post_init__(self):
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")
        if self.penalty_coefficient < 0:
            raise ValueError("penalty_coefficient must be nonnegative")


def edge_norm(rep, idx):
    """Euclidean norm of all parameters (weights and bias) of one edge."""
    wb = rep.weights[idx]
    return float(np.sqrt(np.sum(wb["w"].data ** 2) + np.sum(wb["b"].data ** 2)))


def group_norm_penalty(rep, cfg=None):
    """Sum of per-edge Euclidean norms times the penalty coefficient.

    Each edge contributes one unsquared norm of its whole parameter
    group, so the total is invariant under edge reordering.
    """
    coeff = 1.0 if cfg is None else cfg.penalty_coefficient
    return coeff * sum(edge_norm(rep, i) for i in range(len(rep.graph.edges)))


@dataclass
class PruneReport:
    """What a prune pass removed and which vertices lost all their edges."""

    removed: tuple
    dead_vertices: tuple


def prune(rep, cfg):
    """Drop every edge whose group norm is strictly below cfg.tolerance.

    Returns (new representation, report).  Surviving edges keep their
    exact weight tensors, so optimizer state keyed on them stays valid.
    A subgraph of an acyclic hypergraph is acyclic, so no recheck is
    needed.  Tolerance 0 removes nothing.
    """
    keep, removed = [], []
    for idx, e in enumerate(rep.graph.edges):
        norm = edge_norm(rep, idx)
        if norm < cfg.tolerance:
            removed.append({"sources": e.sources, "targets": e.targets, "norm": norm})
        else:
            keep.append(idx)
    new_graph = Hypergraph(vertex_dims=dict(rep.graph.vertex_dims),
                           edges=tuple(rep.graph.edges[i] for i in keep))
    new_rep = HypergraphRepresentation(
        new_graph,
        activations=dict(rep.activations),
        ratios=dict(rep.ratios),
        weights=[rep.weights[i] for i in keep],
    )
    dead = tuple(v for v in new_graph.vertices
                 if not new_graph.incoming(v) and not new_graph.outgoing(v))
    return new_rep, PruneReport(removed=tuple(removed), dead_vertices=dead)


def _cross_entropy(logits, labels):
    """Mean softmax cross-entropy of (batch, classes) logits vs int labels."""
    n, k = logits.data.shape
    lse = ad.logsumexp(logits, axis=-1)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.reduce_sum(ad.mul(logits, ad.constant(onehot)), axis=-1)
    return ad.scale(ad.reduce_sum(ad.subtract(lse, picked)), 1.0 / n)


def _proximal_shrink(rep, step):
    """Proximal map of step * sum of group norms: shrink each edge group."""
    if step <= 0:
        return
    for wb in rep.weights:
        norm = float(np.sqrt(np.sum(wb["w"].data ** 2) + np.sum(wb["b"].data ** 2)))
        factor = 0.0 if norm == 0.0 else max(0.0, 1.0 - step / norm)
        wb["w"].data = wb["w"].data * factor
        wb["b"].data = wb["b"].data * factor


def evaluate(rep, x, y, input_vertex, output_vertex, batch_size=256):
    """(mean cross-entropy, accuracy) of the representation on x, y."""
    total_ce, hits = 0.0, 0
    for lo in range(0, len(x), batch_size):
        xb, yb = x[lo:lo + batch_size], y[lo:lo + batch_size]
        states = forward_batch(rep, {input_vertex: xb})
        logits = states[output_vertex]
        total_ce += float(_cross_entropy(logits, yb).data) * len(xb)
        hits += int(np.sum(np.argmax(logits.data, axis=1) == yb))
    return total_ce / len(x), hits / len(x)


def train_nas(rep, dataset, opt, cfg, epochs, warmup=5,
              input_vertex=None, output_vertex=None):
    """Train with the group-norm cost and prune small edges as it goes.

    dataset: dict with x_train, y_train, x_test, y_test (labels are int
    class indices matching the output vertex dim).  opt: dict with lr,
    batch_size, seed.  Pruning runs every epoch once `warmup` epochs
    have passed.  Returns (trained representation, history); history has
    one record per epoch with loss, penalty, accuracy, and the live edge
    count, plus a warning flag if a stable-state solve failed.
    """
    x_train = np.asarray(dataset["x_train"], dtype=np.float64)
    y_train = np.asarray(dataset["y_train"], dtype=np.int64)
    x_test = np.asarray(dataset["x_test"], dtype=np.float64)
    y_test = np.asarray(dataset["y_test"], dtype=np.int64)
    if input_vertex is None:
        ins = rep.input_vertices()
        if len(ins) != 1:
            raise ValueError(f"cannot infer input vertex from {ins}; pass input_vertex")
        input_vertex = ins[0]
    if output_vertex is None:
        output_vertex = rep.graph.vertices[-1]

    lr = float(opt.get("lr", 1e-3))
    batch_size = int(opt.get("batch_size", 64))
    rng = np.random.Generator(np.random.PCG64(int(opt.get("seed", 0))))

    params = rep.edge_params()
    state = adam_init(params)
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(x_train))
        epoch_loss, batches, warning = 0.0, 0, False
        try:
            for lo in range(0, len(order), batch_size):
                idx = order[lo:lo + batch_size]
                xb = x_train[idx]
                yb = y_train[idx]
                with ad.Tape() as tape:
                    states = forward_batch(rep, {input_vertex: xb})
                    loss = _cross_entropy(states[output_vertex], yb)
                grads = ad.backward(tape, loss)
                params = rep.edge_params()
                adam_step(params, grads, state, lr=lr)
                _proximal_shrink(rep, lr * cfg.penalty_coefficient)
                epoch_loss += float(loss.data)
                batches += 1
        except NonConvergence:
            warning = True

        pruned, acc_pre = 0, None
        if epoch > warmup:
            candidate, report = prune(rep, cfg)
            if report.removed:
                _, acc_pre = evaluate(rep, x_test, y_test,
                                      input_vertex, output_vertex)
                pruned = len(report.removed)
            rep = candidate

        _, acc = evaluate(rep, x_test, y_test, input_vertex, output_vertex)
        record = {
            "epoch": epoch,
            "loss": epoch_loss / max(batches, 1),
            "penalty": group_norm_penalty(rep, cfg),
            "accuracy": acc,
            "edges": len(rep.graph.edges),
            "param_count": sum(wb["w"].data.size + wb["b"].data.size
                               for wb in rep.weights),
            "warning": warning,
        }
        if pruned:
            record["pruned"] = pruned
            record["accuracy_pre_prune"] = acc_pre
        history.append(record)
    return rep, history


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

SCHEMA = "endokit-architecture/1"


def export_architecture(rep):
    """Serialize a representation to {'json': str, 'dot': str}.

    The JSON payload (schema endokit-architecture/1) carries vertices
    (dim, activation, ratio, dead flag) and edges (source/target sets,
    group norm, full weights), enough to rebuild an identical network.
    The DOT graph draws one ellipse per vertex and one box per
    hyperedge.
    """
    g = rep.graph
    vertices = []
    for v in g.vertices:
        entry = {
            "name": v,
            "dim": g.vertex_dims[v],
            "activation": rep.activations[v],
            "dead": not g.incoming(v) and not g.outgoing(v),
        }
        if v in rep.ratios:
            entry["ratio"] = int(rep.ratios[v])
        vertices.append(entry)
    edges = []
    for idx, e in enumerate(g.edges):
        edges.append({
            "sources": list(e.sources),
            "targets": list(e.targets),
            "weight_norm": edge_norm(rep, idx),
            "w": rep.weights[idx]["w"].data.tolist(),
            "b": rep.weights[idx]["b"].data.tolist(),
        })
    payload = {"schema": SCHEMA, "vertices": vertices, "edges": edges}

    lines = ["digraph architecture {", "  rankdir=LR;"]
    for v in g.vertices:
        style = ', style=dashed' if (not g.incoming(v) and not g.outgoing(v)) else ""
        lines.append(f'  "{v}" [shape=ellipse, label="{v}\\n({g.vertex_dims[v]}, '
                     f'{rep.activations[v]})"{style}];')
    for idx, e in enumerate(g.edges):
        lines.append(f'  "E{idx}" [shape=box, label="E{idx}"];')
        for s in e.sources:
            lines.append(f'  "{s}" -> "E{idx}";')
        for t in e.targets:
            lines.append(f'  "E{idx}" -> "{t}";')
    lines.append("}")

    return {
        "json": json.dumps(payload, indent=2, sort_keys=True),
        "dot": "\n".join(lines) + "\n",
    }


def import_architecture(payload):
    """Rebuild a representation from export_architecture's JSON payload."""
    if isinstance(payload, str):
        payload = json.loads(payload)
    if payload.get("schema") != SCHEMA:
        raise ValueError(f"unsupported schema {payload.get('schema')!r}")
    vertex_dims = {v["name"]: int(v["dim"]) for v in payload["vertices"]}
    activations = {v["name"]: v["activation"] for v in payload["vertices"]}
    ratios = {v["name"]: int(v["ratio"]) for v in payload["vertices"] if "ratio" in v}
    edges = tuple(Hyperedge(tuple(e["sources"]), tuple(e["targets"]))
                  for e in payload["edges"])
    graph = Hypergraph(vertex_dims=vertex_dims, edges=edges)
    weights = [{"w": ad.parameter(np.asarray(e["w"], dtype=np.float64)),
                "b": ad.parameter(np.asarray(e["b"], dtype=np.float64))}
               for e in payload["edges"]]
    return HypergraphRepresentation(graph, activations=activations,
                                    ratios=ratios, weights=weights)


def save_architecture(rep, base_path):
    """Write base_path + '.json' and '.dot'; returns the two paths."""
    art = export_architecture(rep)
    jpath, dpath = f"{base_path}.json", f"{base_path}.dot"
    with open(jpath, "w", encoding="utf-8") as fh:
        fh.write(art["json"] + "\n")
    with open(dpath, "w", encoding="utf-8") as fh:
        fh.write(art["dot"])
    return jpath, dpath

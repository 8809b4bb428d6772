"""Reproducible experiment runs: config in, CSV/JSON/DOT artifacts out.

Every run is a pure function of (experiment, seed, options): randomness
comes from PCG64 generators seeded from the config, floats are written
with repr (shortest round-trip form), and CSV files use a header row,
UTF-8, and LF line endings, so rerunning a config reproduces its output
files byte for byte.  Plots are left to external tools; the CSVs are
tidy.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import datasets
from . import hypergraphs as hg
from . import kernel_finite as kf
from . import kernel_infinite as ki
from . import mlp
from . import nas
from . import volterra as vo

EXPERIMENTS = ("surface", "sine", "nas", "infinite-digits", "volterra-demo")

DEFAULT_OUT_ENV = "ENDOKIT_OUT"


@dataclass
class ExperimentConfig:
    """One experiment run: id, seed, output directory, and hyperparameters.

    options are merged over the experiment's defaults; the merged result
    is echoed to config.json so a run directory fully describes itself.
    out_dir=None falls back to $ENDOKIT_OUT or ./runs, with a
    per-(experiment, seed) subdirectory.
    """

    experiment: str
    seed: int = 0
    out_dir: str = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; "
                             f"choose from {EXPERIMENTS}")


def default_options(experiment):
    """The tuned defaults each experiment starts from."""
    if experiment == "surface":
        return {
            "boundaries": [0, 2, 4, 6, 8, 9],
            "gamma": 1.0, "lr": 0.05, "mu": 1e-3, "epochs": 2000,
            "optimizer": "adam", "test_count": 100,
        }
    if experiment == "sine":
        return {
            "boundaries": [0, 1, 2, 3, 4, 5],
            "gamma": 0.5, "lr": 0.05, "mu": 5e-4, "epochs": 2000,
            "optimizer": "adam", "count": 100, "noise": 0.1, "val_count": 200,
            "mlp_dims": [1, 16, 32, 1], "mlp_lr": 0.01, "mlp_epochs": 2000,
        }
    if experiment == "nas":
        return {
            "per_class": 50,
            "specs": [["in", 64], ["h1", 32], ["h2", 32], ["h3", 32], ["out", 10]],
            "ratios": [2], "activation": "relu",
            "penalty_coefficient": 4.0, "tolerance": 1e-6,
            "lr": 0.02, "batch_size": 64, "epochs": 40, "warmup": 5,
        }
    if experiment == "infinite-digits":
        return {
            "per_class": 1, "dim": 16, "max_frequency": 20, "mu": 0.05,
            "epochs": 200, "lr": 0.05, "gamma": 1.0, "steps": 48,
            "eval_every": 10, "hist_bins": 16,
        }
    if experiment == "volterra-demo":
        return {"t0": 0.0, "T": 1.0, "steps": 100}
    raise ValueError(f"unknown experiment {experiment!r}")


# ---------------------------------------------------------------------------
# file output
# ---------------------------------------------------------------------------

def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, fieldnames, rows):
    """Tidy CSV: header row, UTF-8, LF endings, repr-formatted floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row.get(k)) for k in fieldnames})


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")


def resolve_out_dir(config):
    """The run directory: explicit out_dir, or $ENDOKIT_OUT/./runs + subdir."""
    if config.out_dir is not None:
        return config.out_dir
    base = os.environ.get(DEFAULT_OUT_ENV, "runs")
    return os.path.join(base, f"{config.experiment}-seed{config.seed}")


# ---------------------------------------------------------------------------
# individual experiments
# ---------------------------------------------------------------------------

def _run_surface(seed, opts, out):
    x_train, y_train, x_test, y_test = datasets.gen_polynomial_grid(
        test_count=int(opts["test_count"]), seed=seed)
    cfg = {
        "filtration": kf.Filtration(int(opts["boundaries"][-1]),
                                    tuple(opts["boundaries"])),
        "gamma": opts["gamma"], "lr": opts["lr"], "epochs": opts["epochs"],
        "optimizer": opts["optimizer"], "val": (x_test, y_test),
    }
    params, hist = kf.fit((x_train, y_train), kf.TrainingObjective(mu=opts["mu"]), cfg)
    count = kf.param_count(params)
    rows = [{"epoch": h["epoch"], "train_mse": h["train_loss"],
             "val_mse": h["val_loss"], "rkhs_norm_sq": h["rkhs_norm_sq"],
             "objective": h["objective"], "param_count": count} for h in hist]
    write_csv(os.path.join(out, "history.csv"),
              ["epoch", "train_mse", "val_mse", "rkhs_norm_sq", "objective",
               "param_count"], rows)
    _write_text(os.path.join(out, "params.json"), kf.params_to_json(params))
    final = rows[-1]
    return (f"surface seed={seed}: train_mse {final['train_mse']:.3e} "
            f"val_mse {final['val_mse']:.3e} params {count}")


def _run_sine(seed, opts, out):
    x, y = datasets.gen_noisy_sine(int(opts["count"]), opts["noise"], seed=seed)
    xv, yv = datasets.gen_noisy_sine(int(opts["val_count"]), opts["noise"],
                                     seed=seed + 1000)
    cfg = {
        "filtration": kf.Filtration(int(opts["boundaries"][-1]),
                                    tuple(opts["boundaries"])),
        "gamma": opts["gamma"], "lr": opts["lr"], "epochs": opts["epochs"],
        "optimizer": opts["optimizer"], "val": (xv, yv),
    }
    params, km_hist = kf.fit((x, y), kf.TrainingObjective(mu=opts["mu"]), cfg)
    km_count = kf.param_count(params)

    mlp_hists = {}
    mlp_count = None
    dims = list(opts["mlp_dims"])
    for act in ("relu", "sigmoid"):
        model, h = mlp.mlp_baseline(dims, [act] * (len(dims) - 2), (x, y),
                                    {"lr": opts["mlp_lr"],
                                     "epochs": opts["mlp_epochs"],
                                     "seed": seed, "val": (xv, yv)})
        mlp_hists[act] = h
        mlp_count = model.param_count()

    rows = []
    for i, h in enumerate(km_hist):
        row = {"epoch": h["epoch"], "km_train_mse": h["train_loss"],
               "km_val_mse": h["val_loss"], "km_param_count": km_count,
               "mlp_param_count": mlp_count}
        for act in ("relu", "sigmoid"):
            if i < len(mlp_hists[act]):
                row[f"mlp_{act}_train_mse"] = mlp_hists[act][i]["train_loss"]
                row[f"mlp_{act}_val_mse"] = mlp_hists[act][i]["val_loss"]
        rows.append(row)
    write_csv(os.path.join(out, "history.csv"),
              ["epoch", "km_train_mse", "km_val_mse", "mlp_relu_train_mse",
               "mlp_relu_val_mse", "mlp_sigmoid_train_mse",
               "mlp_sigmoid_val_mse", "km_param_count", "mlp_param_count"],
              rows)
    _write_text(os.path.join(out, "params.json"), kf.params_to_json(params))
    km_val = km_hist[-1]["val_loss"]
    relu_val = mlp_hists["relu"][-1]["val_loss"]
    sigm_val = mlp_hists["sigmoid"][-1]["val_loss"]
    beats = km_val <= relu_val and km_val <= sigm_val
    return (f"sine seed={seed}: km_val {km_val:.4f} ({km_count}p) vs relu "
            f"{relu_val:.4f} / sigmoid {sigm_val:.4f} ({mlp_count}p) "
            f"{'km wins' if beats else 'mlp wins'}")


def _run_nas(seed, opts, out):
    x_train, y_train, x_test, y_test = datasets.load_digits(
        per_class=int(opts["per_class"]), seed=seed)
    dataset = {"x_train": x_train, "y_train": y_train,
               "x_test": x_test, "y_test": y_test}
    specs = [(name, int(dim)) for name, dim in opts["specs"]]
    graph = hg.maximal_connectivity(specs, pool_ratios=tuple(opts["ratios"]))
    hidden = {name: opts["activation"] for name, _ in specs[1:-1]}
    rep = hg.HypergraphRepresentation(graph, activations=hidden, seed=seed)
    cfg = nas.PruneConfig(tolerance=opts["tolerance"],
                          penalty_coefficient=opts["penalty_coefficient"])
    rep, hist = nas.train_nas(rep, dataset,
                              {"lr": opts["lr"], "batch_size": opts["batch_size"],
                               "seed": seed},
                              cfg, epochs=int(opts["epochs"]),
                              warmup=int(opts["warmup"]))
    write_csv(os.path.join(out, "history.csv"),
              ["epoch", "train_ce", "penalty", "test_accuracy", "edges",
               "param_count", "pruned", "accuracy_pre_prune", "warning"],
              [{"epoch": h["epoch"], "train_ce": h["loss"],
                "penalty": h["penalty"], "test_accuracy": h["accuracy"],
                "edges": h["edges"], "param_count": h["param_count"],
                "pruned": h.get("pruned"),
                "accuracy_pre_prune": h.get("accuracy_pre_prune"),
                "warning": h["warning"]} for h in hist])
    arts = nas.export_architecture(rep)
    _write_text(os.path.join(out, "architecture.json"), arts["json"])
    _write_text(os.path.join(out, "architecture.dot"), arts["dot"])
    _write_text(os.path.join(out, "params.json"), arts["json"])
    final = hist[-1]
    return (f"nas seed={seed}: accuracy {final['accuracy']:.3f} edges "
            f"{final['edges']}/{len(graph.edges)} params {final['param_count']}")


def _run_infinite(seed, opts, out):
    x_train, y_train, x_test, y_test = datasets.load_digits(
        per_class=int(opts["per_class"]), seed=seed)
    ds = {"x_train": x_train, "y_train": y_train,
          "x_test": x_test, "y_test": y_test}
    cfg = {"dim": opts["dim"], "max_frequency": opts["max_frequency"],
           "mu": opts["mu"], "epochs": opts["epochs"], "lr": opts["lr"],
           "gamma": opts["gamma"], "steps": opts["steps"], "seed": seed,
           "eval_every": opts["eval_every"], "hist_bins": opts["hist_bins"]}
    params, hist = ki.train_infinite(ds, cfg)
    count = ki.param_count(params)
    write_csv(os.path.join(out, "history.csv"),
              ["epoch", "train_loss", "objective", "train_accuracy",
               "test_loss", "test_accuracy", "param_count"],
              [{"epoch": h["epoch"], "train_loss": h["train_loss"],
                "objective": h["objective"], "train_accuracy": h["accuracy"],
                "test_loss": h.get("test_loss"),
                "test_accuracy": h.get("test_accuracy"),
                "param_count": count} for h in hist])
    hist_rows = []
    for h in hist:
        counts = h["coeff_hist"]["counts"]
        edges = h["coeff_hist"]["edges"]
        for b in range(len(counts)):
            hist_rows.append({"epoch": h["epoch"], "bin_low": edges[b],
                              "bin_high": edges[b + 1], "count": counts[b]})
    write_csv(os.path.join(out, "coeff_hist.csv"),
              ["epoch", "bin_low", "bin_high", "count"], hist_rows)
    _write_text(os.path.join(out, "params.json"), ki.params_to_json(params))
    final = hist[-1]
    return (f"infinite-digits seed={seed}: train {final['train_loss']:.4f} "
            f"held-out accuracy {final.get('test_accuracy', float('nan')):.3f} "
            f"params {count}")


def _run_volterra_demo(seed, opts, out):
    grid = vo.TimeGrid(t0=opts["t0"], T=opts["T"], steps=int(opts["steps"]))
    kernel = vo.SeparableKernel(components=(lambda s, v: v,),
                                coefficients=(lambda t: 1.0,),
                                bilinear=lambda u, c: u * c, lipschitz=1.0)
    sol = vo.solve_separable(kernel, lambda t: np.array([1.0]), grid)
    exact = np.exp(grid.nodes)
    rows = [{"t": t, "u": u, "exact": e, "abs_error": abs(u - e)}
            for t, u, e in zip(grid.nodes, sol.u[:, 0], exact)]
    write_csv(os.path.join(out, "history.csv"),
              ["t", "u", "exact", "abs_error"], rows)
    _write_text(os.path.join(out, "params.json"), json.dumps({
        "equation": "u(t) = 1 + integral of u(s) ds",
        "solver": "separable-rk4", "t0": grid.t0, "T": grid.T,
        "steps": grid.steps, "residual": sol.residual,
    }, sort_keys=True, indent=2))
    max_err = max(r["abs_error"] for r in rows)
    return f"volterra-demo: max |u - exp(t)| = {max_err:.3e} over {grid.steps} steps"


def run(config):
    """Execute one experiment; write config.json, history.csv, params.json
    (plus architecture files for nas) into the run directory; print and
    return a one-line summary."""
    opts = {**default_options(config.experiment), **config.options}
    out = resolve_out_dir(config)
    os.makedirs(out, exist_ok=True)
    _write_text(os.path.join(out, "config.json"), json.dumps({
        "experiment": config.experiment, "seed": config.seed,
        "options": opts,
    }, sort_keys=True, indent=2))

    runner = {
        "surface": _run_surface,
        "sine": _run_sine,
        "nas": _run_nas,
        "infinite-digits": _run_infinite,
        "volterra-demo": _run_volterra_demo,
    }[config.experiment]
    summary = runner(config.seed, opts, out)
    print(summary)
    return summary


# ---------------------------------------------------------------------------
# gradient audit (CLI `grad-check`)
# ---------------------------------------------------------------------------

def grad_check_report(seed=0):
    """Worst grad_check relative error per primitive op and end to end.

    Probe points are kept at moderate scale so kernel values stay O(1):
    central differences lose meaning once analytic gradients sit below
    the finite-difference noise floor.
    """
    rng = np.random.default_rng(seed)
    report = {}

    def check(name, build, params):
        report[name] = float(ad.grad_check(lambda _: build(), params))

    a = ad.parameter(rng.normal(size=(3, 4)) * 0.5)
    b = ad.parameter(rng.normal(size=(3, 4)) * 0.5)
    w = ad.parameter(rng.normal(size=(4, 2)) * 0.5)
    check("add_mul", lambda: ad.squared_norm(ad.mul(ad.add(a, b), b)), [a, b])
    check("matmul", lambda: ad.squared_norm(ad.matmul(a, w)), [a, w])
    check("exp_log", lambda: ad.reduce_sum(ad.log(ad.add(ad.exp(a), ad.constant(np.ones((3, 4)))))), [a])
    check("tanh", lambda: ad.squared_norm(ad.tanh(a)), [a])
    check("sigmoid", lambda: ad.squared_norm(ad.sigmoid(a)), [a])
    check("relu", lambda: ad.squared_norm(ad.relu(a)), [a])
    check("logsumexp", lambda: ad.reduce_sum(ad.logsumexp(a, axis=-1)), [a])
    check("concat_slice", lambda: ad.squared_norm(
        ad.slice_block(ad.concat([a, b], axis=1), 2, 6, axis=1)), [a, b])
    check("reshape_transpose", lambda: ad.squared_norm(
        ad.transpose(ad.reshape(a, (4, 3)))), [a])

    # end-to-end: layered kernel machine loss
    filt = kf.Filtration(4, (0, 1, 2, 3, 4))
    anchors = rng.normal(size=(5, 4)) * 0.5
    g = rng.normal(size=(6, 4)) * 0.5
    targets = rng.normal(size=(6, 1))
    c = ad.parameter(rng.normal(size=(5, 4)) * 0.3)

    def km_loss():
        h = kf._forward_tape(c, anchors, g, filt, 1.0)
        pred = ad.slice_block(h, 3, 4, axis=1)
        return ad.squared_norm(ad.subtract(pred, ad.constant(targets)))

    check("kernel_machine", km_loss, [c])

    # end-to-end: loss through the unrolled integral-equation solve
    grid = vo.TimeGrid(t0=0.0, T=1.0, steps=6)
    filt_i = ki.ContinuousFiltration(grid=grid, dim=2)
    coeffs = ki.FourierCoefficients(values=rng.normal(size=(3, 2, 5)) * 0.3,
                                    t0=0.0, T=1.0)
    anchors_i = rng.normal(size=(3, grid.steps + 1, 2)) * 0.5
    prm = ki.InfiniteMachineParams(filtration=filt_i, anchors=anchors_i,
                                   coefficients=coeffs, gamma=1.0)
    anchors_half, _ = ki._half_tables(prm)
    basis_half = ki.fourier_basis(grid.half_nodes, 0.0, 1.0, 2)
    pts = rng.normal(size=(4, 2)) * 0.4
    cf = ad.parameter(ki._coeff_matrix(coeffs))
    wr = ad.parameter(rng.normal(size=(3, 2)) * 0.5)
    br = ad.parameter(np.zeros(3))

    def volterra_loss():
        scores = ki._unrolled_scores(cf, wr, br, ad.constant(pts), anchors_half,
                                     basis_half, 1.0, grid, 3, 2)
        return ad.scale(ad.squared_norm(scores), 0.5)

    check("unrolled_volterra", volterra_loss, [cf, wr, br])

    report["worst"] = max(report.values())
    return report

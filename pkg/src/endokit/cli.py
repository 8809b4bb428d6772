"""Command-line entry point: `endokit <experiment> [--config ...] [...]`.

Precedence for every setting is CLI flag > config file > built-in
default.  A config file is JSON with optional keys "seed", "out_dir",
and "options" (or experiment options at the top level).
"""

import argparse
import json
import sys

from . import experiments


def _load_config_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a JSON object")
    seed = raw.get("seed")
    out_dir = raw.get("out_dir")
    options = raw.get("options")
    if options is None:
        options = {k: v for k, v in raw.items()
                   if k not in ("seed", "out_dir", "experiment")}
    return seed, out_dir, options


def build_parser():
    parser = argparse.ArgumentParser(
        prog="endokit",
        description="Train and evaluate stable-state machines; each run "
                    "writes config.json, history.csv, and params.json.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
            ("surface", "fit a kernel machine to a polynomial surface grid"),
            ("sine", "kernel machine vs two MLP baselines on noisy sine data"),
            ("nas", "architecture search on digits with group-norm pruning"),
            ("infinite-digits", "integral-equation machine on one digit per class"),
            ("volterra-demo", "solve u = 1 + integral u and compare to exp(t)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="PRNG seed (default 0)")
        p.add_argument("--out", help="output directory for run artifacts")

    g = sub.add_parser("grad-check", help="finite-difference audit of every "
                                          "gradient path")
    g.add_argument("--seed", type=int, default=0, help="probe-point seed")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == "grad-check":
        report = experiments.grad_check_report(seed=args.seed)
        worst = report.pop("worst")
        for name in sorted(report):
            print(f"{name:>20s}  max rel err {report[name]:.3e}")
        print(f"{'worst':>20s}  {worst:.3e}")
        return 0 if worst < 1e-5 else 1

    seed, out_dir, options = 0, None, {}
    if args.config:
        cfg_seed, cfg_out, cfg_options = _load_config_file(args.config)
        if cfg_seed is not None:
            seed = int(cfg_seed)
        if cfg_out is not None:
            out_dir = cfg_out
        options = cfg_options
    if args.seed is not None:
        seed = args.seed
    if args.out is not None:
        out_dir = args.out

    experiments.run(experiments.ExperimentConfig(
        experiment=args.command, seed=seed, out_dir=out_dir, options=options))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Commands: ``synth`` (write the two-domain benchmark), ``train``, ``eval``,
``dump-embeddings``, ``selfcheck`` (numeric oracle suites), and ``sweep``
(one hyperparameter over several values). Exit codes: 0 success, 1 user
error, 2 internal check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import model as mdl
from . import training
from .data import SynthSpec, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigError, GradaError
from .selfcheck import run_selfcheck
from .training import TrainConfig, records_to_csv, run_experiment

_PATH_KEYS = ("source", "target", "out")


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad flags; user errors must be 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _field_types() -> dict[str, type]:
    types = {}
    for f in dataclasses.fields(TrainConfig):
        types[f.name] = f.type if isinstance(f.type, type) else {
            "int": int, "float": float, "str": str}[f.type]
    return types


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines with ``#`` comments. Keys must be config
    field names or one of source/target/out."""
    types = _field_types()
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in _PATH_KEYS:
                out[key] = value
            elif key in types:
                try:
                    out[key] = types[key](value)
                except ValueError:
                    raise ConfigError(
                        f"{path}:{lineno}: bad value {value!r} for key {key!r}")
            else:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
    return out


def _apply_overrides(values: dict, pairs: list[str]) -> None:
    types = _field_types()
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        if key in _PATH_KEYS:
            values[key] = value
        elif key in types:
            try:
                values[key] = types[key](value)
            except ValueError:
                raise ConfigError(f"bad value {value!r} for key {key!r}")
        else:
            raise ConfigError(f"unknown config key {key!r}")


def _build_config(args) -> tuple[TrainConfig, dict]:
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    _apply_overrides(values, getattr(args, "set", []) or [])
    for key, flag in (("source", "source"), ("target", "target"), ("out", "out"),
                      ("seed", "seed"), ("ablation_mode", "ablation"),
                      ("epochs", "epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    paths = {k: values.pop(k, None) for k in _PATH_KEYS}
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg, paths


def _load_graphs(path, recompute: bool, name: str = "dataset"):
    if path is None:
        raise ConfigError(f"missing {name} path")
    if not os.path.exists(path):
        raise ConfigError(f"{name} path does not exist: {path}")
    return load_dataset(path, recompute_features=recompute)


def _effective_config(cfg: TrainConfig, paths: dict) -> dict:
    blob = dataclasses.asdict(cfg)
    blob.update({k: v for k, v in paths.items() if v is not None})
    return blob


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    spec = SynthSpec(
        graphs_per_class=args.graphs_per_class, nodes_min=args.nodes_min,
        nodes_max=args.nodes_max, q0=args.q0, q1=args.q1,
        delta_density=args.delta, sigma_shift=args.sigma_shift, seed=args.seed,
    )
    spec.validate()
    source, target = generate_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    src_path = os.path.join(args.out, "source.grada")
    tgt_path = os.path.join(args.out, "target.grada")
    save_dataset(src_path, source)
    save_dataset(tgt_path, target)
    print(json.dumps({"source": src_path, "target": tgt_path,
                      "graphs_per_domain": 2 * spec.graphs_per_class}))
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg, paths = _build_config(args)
    out_dir = paths.get("out") or "."
    os.makedirs(out_dir, exist_ok=True)
    source = _load_graphs(paths.get("source"), args.recompute_features, "source")
    target = _load_graphs(paths.get("target"), args.recompute_features, "target")

    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    result = run_experiment(cfg, source, target, metrics_path=metrics_path)

    checkpoint_path = os.path.join(out_dir, "checkpoint.npz")
    mdl.save_params(result.params, checkpoint_path)
    if args.csv:
        records_to_csv(result.records, os.path.join(out_dir, "metrics.csv"))

    last = result.records[-1] if result.records else {}
    summary = {
        "final_f1_target": result.final_f1_target,
        "final_f1_source": result.final_f1_source,
        "losses": {k: last.get(k) for k in ("recon", "kl", "entropy_reg", "cls", "nwd")},
        "seed": cfg.seed,
        "classes": [int(c) for c in result.classes],
        "optimizer_steps": result.optimizer_steps,
        "wall_clock_seconds": time.time() - started,
        "config": _effective_config(cfg, paths),
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary))
    return 0


def _classes_for_dataset(graphs, num_classes: int) -> np.ndarray:
    labels = sorted({g.label for g in graphs if g.label is not None})
    if len(labels) != num_classes:
        raise GradaError(
            f"dataset has {len(labels)} labeled classes but the checkpoint "
            f"classifier has {num_classes} outputs")
    return np.array(labels)


def cmd_eval(args) -> int:
    params = mdl.load_params(args.checkpoint)
    graphs = _load_graphs(args.dataset, args.recompute_features)
    if graphs[0].features.shape[1] != params.num_features:
        raise GradaError(
            f"dataset feature dimension {graphs[0].features.shape[1]} does not "
            f"match checkpoint dimension {params.num_features}")
    if any(g.label is None for g in graphs):
        raise GradaError("eval needs a labeled dataset")
    classes = _classes_for_dataset(graphs, params.num_classes)
    positive = args.positive_class if args.positive_class is not None else int(classes[-1])
    f1 = training.evaluate_f1(params, graphs, classes, positive)
    print(json.dumps({"f1": f1, "positive_class": positive, "num_graphs": len(graphs)}))
    return 0


def cmd_dump_embeddings(args) -> int:
    params = mdl.load_params(args.checkpoint)
    graphs = _load_graphs(args.dataset, args.recompute_features)
    if graphs[0].features.shape[1] != params.num_features:
        raise GradaError(
            f"dataset feature dimension {graphs[0].features.shape[1]} does not "
            f"match checkpoint dimension {params.num_features}")
    emb = training.graph_embeddings(params, graphs)
    with open(args.out_file, "w", encoding="utf-8") as fh:
        header = ["graph_id", "domain", "label"] + [f"z{i}" for i in range(emb.shape[1])]
        fh.write(",".join(header) + "\n")
        for gid, (g, row) in enumerate(zip(graphs, emb)):
            label = "none" if g.label is None else str(int(g.label))
            fh.write(",".join([str(gid), args.domain, label]
                              + [repr(float(v)) for v in row]) + "\n")
    print(json.dumps({"rows": len(graphs), "out": args.out_file}))
    return 0


def cmd_selfcheck(args) -> int:
    ok = run_selfcheck(corrupt_nuclear_grad=args.corrupt_nuclear_grad)
    print("selfcheck:", "all checks passed" if ok else "FAILURES detected")
    return 0 if ok else 2


def _sweep_run(payload) -> dict:
    values, out_dir = payload
    paths = {k: values.pop(k, None) for k in _PATH_KEYS if k in values}
    cfg = TrainConfig(**values)
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    source = load_dataset(paths["source"])
    target = load_dataset(paths["target"])
    result = run_experiment(cfg, source, target,
                            metrics_path=os.path.join(out_dir, "metrics.jsonl"))
    mdl.save_params(result.params, os.path.join(out_dir, "checkpoint.npz"))
    return {"out": out_dir, "final_f1_target": result.final_f1_target,
            "final_f1_source": result.final_f1_source}


def cmd_sweep(args) -> int:
    cfg, paths = _build_config(args)
    if not paths.get("source") or not paths.get("target"):
        raise ConfigError("sweep needs --source and --target (or config entries)")
    types = _field_types()
    if args.param not in types:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    try:
        values = [types[args.param](v) for v in args.values.split(",") if v]
    except ValueError:
        raise ConfigError(f"bad sweep values {args.values!r} for {args.param!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out_root = paths.get("out") or "sweep"
    os.makedirs(out_root, exist_ok=True)

    jobs = []
    for v in values:
        blob = dataclasses.asdict(cfg)
        blob[args.param] = v
        blob["source"] = paths["source"]
        blob["target"] = paths["target"]
        jobs.append((blob, os.path.join(out_root, f"{args.param}={v}")))

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_run, jobs))
    else:
        results = [_sweep_run(job) for job in jobs]

    summary_path = os.path.join(out_root, "sweep.jsonl")
    with open(summary_path, "w", encoding="utf-8") as fh:
        for v, res in zip(values, results):
            fh.write(json.dumps({"param": args.param, "value": v, **res}) + "\n")
    print(json.dumps({"runs": len(results), "summary": summary_path}))
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--ablation", choices=training.ABLATION_MODES,
                   help="objective ablation mode")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grada",
                     description="Domain-adaptive graph classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic two-domain benchmark")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--graphs-per-class", type=int, default=100)
    p.add_argument("--nodes-min", type=int, default=12)
    p.add_argument("--nodes-max", type=int, default=20)
    p.add_argument("--q0", type=float, default=0.10)
    p.add_argument("--q1", type=float, default=0.25)
    p.add_argument("--delta", type=float, default=0.15)
    p.add_argument("--sigma-shift", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a source/target dataset pair")
    _add_common(p)
    p.add_argument("--source", help="labeled source dataset file")
    p.add_argument("--target", help="target dataset file")
    p.add_argument("--epochs", type=int, help="override epoch count")
    p.add_argument("--csv", action="store_true", help="also export metrics.csv")
    p.add_argument("--recompute-features", action="store_true",
                   help="ignore stored features and recompute them")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--positive-class", type=int)
    p.add_argument("--recompute-features", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-embeddings",
                       help="write per-graph pooled embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-file", required=True)
    p.add_argument("--domain", default="data", help="domain tag column value")
    p.add_argument("--recompute-features", action="store_true")
    p.set_defaults(func=cmd_dump_embeddings)

    p = sub.add_parser("selfcheck", help="run the numeric oracle suites")
    p.add_argument("--corrupt-nuclear-grad", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control test hook
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("sweep", help="train across several values of one parameter")
    _add_common(p)
    p.add_argument("--source", help="labeled source dataset file")
    p.add_argument("--target", help="target dataset file")
    p.add_argument("--param", required=True, help="config field to vary")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel worker processes (default: sequential)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GradaError, FileNotFoundError) as exc:
        print(f"grada: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands: synth, featurize, train, design, eval, bench. Results go to
stdout or ``--out``; diagnostics go to stderr.

Exit codes:
    0  success
    1  unexpected internal error
    2  usage error (bad flags or arguments)
    3  checkpoint not found
    4  invalid input data (dataset, manifest or config)
    5  unreadable or inconsistent checkpoint
    6  numerical failure during training
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import _kernels
from .autodiff import set_precision
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DatasetError, dumps_record, load_manifest, parse_jsonl, split_dataset, synth_dataset, write_jsonl
from .geometry import ALPHABET
from .graph import FeatureConfig, describe_layout, featurize
from .pignn import ModelConfig, init_params

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_NO_CHECKPOINT, EXIT_DATA, EXIT_CHECKPOINT, EXIT_NUMERIC = range(7)


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}", EXIT_DATA) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_DATA) from None
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object", EXIT_DATA)
    return cfg


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _dataset(args):
    try:
        proteins = parse_jsonl(args.data)
    except FileNotFoundError:
        raise CliError(f"dataset not found: {args.data}", EXIT_DATA) from None
    if getattr(args, "split", None):
        manifest = load_manifest(args.split)
        routed = split_dataset(proteins, manifest)
        proteins = getattr(routed, args.subset)
    return proteins


def _checkpoint(path):
    if not os.path.exists(path):
        raise CliError(f"checkpoint not found: {path}", EXIT_NO_CHECKPOINT)
    return load_checkpoint(path, requires_grad=False)


def _model_config(cfg: dict, args) -> ModelConfig:
    model = dict(cfg.get("model", {}))
    for key in ("d", "layers", "heads", "dropout"):
        if getattr(args, key, None) is not None:
            model[key] = getattr(args, key)
    if getattr(args, "n_virtual", None) is not None:
        model.setdefault("features", {})["n_virtual"] = args.n_virtual
    return ModelConfig.from_dict(model)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    proteins = synth_dataset(args.seed, args.n, args.count)
    if args.out is None:
        sys.stdout.write("".join(dumps_record(p) + "\n" for p in proteins))
    else:
        write_jsonl(proteins, args.out)


def _layout_table(layout: dict) -> str:
    lines = [f"layout {layout['version']}  node width {layout['node_width']}  edge width {layout['edge_width']}"]
    for block in layout["node"] + layout["edge"]:
        lines.append(f"  {block['name']:<32} {block['start']:>4} .. {block['stop']:<4}")
    return "\n".join(lines) + "\n"


def cmd_featurize(args, cfg):
    features = FeatureConfig.from_dict(cfg.get("model", {}).get("features", {}))
    if args.describe:
        layout = describe_layout(features)
        _emit(json.dumps(layout, indent=2) + "\n" if args.json else _layout_table(layout), args.out)
        return
    if args.data is None:
        raise CliError("featurize needs a dataset path unless --describe is given", EXIT_USAGE)
    params = init_params(ModelConfig(d=4, layers=0, heads=1, features=features), seed=args.seed, requires_grad=False)
    rows = []
    for p in _dataset(args):
        g = featurize(p, features, params.virtual.value)
        rows.append({"name": p.name, "residues": len(p), "nodes": g.n, "edges": g.m,
                     "node_width": g.node_features.shape[1], "edge_width": g.edge_features.shape[1]})
    _emit("".join(json.dumps(r) + "\n" for r in rows), args.out)


def cmd_train(args, cfg):
    from .train import TrainConfig, evaluate, train

    train_cfg = dict(cfg.get("train", {}))
    for key in ("lr", "batch_size", "epochs", "max_steps", "schedule"):
        if getattr(args, key, None) is not None:
            train_cfg[key] = getattr(args, key)
    train_cfg["seed"] = args.seed
    train_cfg["precision"] = args.precision
    tc = TrainConfig.from_dict(train_cfg)
    params = init_params(_model_config(cfg, args), seed=args.seed)
    proteins = _dataset(args)
    if args.out is None:
        raise CliError("train needs --out for the checkpoint", EXIT_USAGE)
    log = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        state = train(proteins, params, tc, log=log)
    finally:
        if log is not None:
            log.close()
    save_checkpoint(args.out, params, extra={"train": tc.to_dict(), "steps": state.step})
    report = evaluate(proteins, params)
    sys.stderr.write(f"trained {state.step} steps; training-set median recovery {report.median_recovery:.1f}%\n")


def cmd_design(args, cfg):
    from .decoders import one_shot_decode

    params = _checkpoint(args.checkpoint)
    proteins = _dataset(args)
    fasta, sidecar = [], {}
    for p in proteins:
        if not p.mask.any():
            raise CliError(f"{p.name}: no residue has complete coordinates", EXIT_DATA)
        out = one_shot_decode(featurize(p, params.config.features, params.virtual.value), params)
        codes, logp, mask = out.for_protein(0, len(p))
        seq = "".join(ALPHABET[c] if m else "X" for c, m in zip(codes, mask))
        fasta.append(f">{p.name}\n{seq}\n")
        sidecar[p.name] = {"log_probs": logp.round(6).tolist(), "scored": mask.tolist(),
                           "wall_time": out.wall_time}
    _emit("".join(fasta), args.out)
    side_path = args.sidecar or (args.out + ".json" if args.out else None)
    if side_path:
        with open(side_path, "w", encoding="utf-8") as fh:
            json.dump({"alphabet": ALPHABET, "proteins": sidecar}, fh)


def cmd_eval(args, cfg):
    from .train import evaluate

    params = _checkpoint(args.checkpoint)
    report = evaluate(_dataset(args), params, max_length=args.max_length)
    _emit(json.dumps(report.to_dict(), indent=2) + "\n", args.out)


def cmd_bench(args, cfg):
    from .bench import BenchConfig, bench_decoding

    bench = dict(cfg.get("bench", {}))
    if args.lengths:
        bench["lengths"] = tuple(int(x) for x in args.lengths.split(","))
    for key in ("reps", "warmup", "d"):
        if getattr(args, key, None) is not None:
            bench[key] = getattr(args, key)
    bench["seed"] = args.seed
    if "lengths" in bench:
        bench["lengths"] = tuple(bench["lengths"])
    report = bench_decoding(
        BenchConfig(**bench),
        parallel=args.parallel,
        progress=lambda e: sys.stderr.write(f"L={e.length}: ratio {e.ratio:.1f}\n"),
    )
    _emit(report.to_json() + "\n", args.out)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with model/train/bench sections")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--precision", choices=("f32", "f64"), default="f64")
    common.add_argument("--out", help="output path (default: stdout)")

    parser = argparse.ArgumentParser(prog="invfold", description="Structure-conditioned sequence design.")
    parser.add_argument("--version", action="version", version="invfold 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic backbones as JSON lines")
    p.add_argument("--n", type=int, default=50, help="residues per chain")
    p.add_argument("--count", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    def data_args(p):
        p.add_argument("data", help="JSON-lines dataset")
        p.add_argument("--split", help="split manifest JSON")
        p.add_argument("--subset", choices=("train", "validation", "test"), default="test")

    p = sub.add_parser("featurize", parents=[common], help="feature summary or layout table")
    p.add_argument("data", nargs="?")
    p.add_argument("--describe", action="store_true", help="print the column layout and exit")
    p.add_argument("--json", action="store_true", help="layout as JSON instead of a table")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint to --out")
    data_args(p)
    p.set_defaults(subset="train")
    p.add_argument("--log", help="JSON-lines metrics log")
    for flag, typ in (("--lr", float), ("--batch-size", int), ("--epochs", int), ("--max-steps", int),
                      ("--d", int), ("--layers", int), ("--heads", int), ("--dropout", float),
                      ("--n-virtual", int)):
        p.add_argument(flag, type=typ)
    p.add_argument("--schedule", choices=("constant", "onecycle"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("design", parents=[common], help="one-shot sequence design to FASTA")
    data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sidecar", help="JSON path for log-probabilities (default: <out>.json)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("eval", parents=[common], help="perplexity and recovery report")
    data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-length", type=int, help="only proteins up to this length")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="one-shot vs autoregressive decoding latency")
    p.add_argument("--lengths", help="comma-separated, default 200,400,800,1600")
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--parallel", action="store_true", help="throughput mode, one process per length")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        set_precision(args.precision)
        cfg = _load_config(args.config)
        args.func(args, cfg)
        return EXIT_OK
    except CliError as exc:
        sys.stderr.write(f"invfold {args.command}: {exc}\n")
        return exc.code
    except CheckpointError as exc:
        sys.stderr.write(f"invfold {args.command}: {exc}\n")
        return EXIT_CHECKPOINT
    except DatasetError as exc:
        sys.stderr.write(f"invfold {args.command}: {exc}\n")
        return EXIT_DATA
    except FloatingPointError as exc:
        sys.stderr.write(f"invfold {args.command}: {exc}\n")
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError, OSError) as exc:
        sys.stderr.write(f"invfold {args.command}: invalid input: {exc}\n")
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last-resort guard
        sys.stderr.write(f"invfold {args.command}: internal error: {exc!r} (kernels: {_kernels.BACKEND})\n")
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

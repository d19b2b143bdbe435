"""Command-line entry point: ``coopgnn {generate,train,eval,trace,bench}``.

Exit status is 0 on success, 1 on a validation problem (bad flag, bad config,
malformed data) and 2 on an I/O problem (missing or unwritable file).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import datagen, harness
from . import rng as rngmod
from .errors import CoGnnError, ParseError
from .harness import RunConfig
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("coopgnn")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

_SCALARS = {"int": int, "float": float, "str": str}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; usage errors are validation errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- config files -------------------------------------------------------------------------


def _convert(raw: str, annotation: str):
    optional = annotation.endswith("| None")
    if optional and raw.lower() in ("none", ""):
        return None
    kind = annotation.replace("| None", "").strip()
    if kind == "str":
        return raw.strip("'\"")
    return _SCALARS[kind](raw)


def parse_config(path) -> RunConfig:
    """Read a ``key = value`` run config; ``#`` starts a comment. Missing keys take RunConfig defaults."""
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    values: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, raw = text.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or not key:
                raise ParseError(path, lineno, f"expected 'key = value', got {line.strip()!r}")
            if key not in fields:
                raise ParseError(path, lineno, f"unknown key {key!r}")
            if key in values:
                raise ParseError(path, lineno, f"duplicate key {key!r}")
            try:
                values[key] = _convert(raw, fields[key])
            except ValueError:
                raise ParseError(path, lineno, f"bad value {raw!r} for {key!r} ({fields[key]})") from None
    return RunConfig(**values)


def format_config(config: RunConfig) -> str:
    """Every field, defaults included, in the format ``parse_config`` reads."""
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


# -- subcommands ----------------------------------------------------------------------------


def cmd_generate(args) -> str:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dataset == "root-neighbors":
        samples = datagen.generate_root_neighbors(args.seed, args.per_split)
        datagen.write_root_neighbors(out, samples)
    else:
        samples = datagen.generate_cycles()
        datagen.write_cycles(out, samples)
    return f"generate: {len(samples)} {args.dataset} graphs -> {out}"


def cmd_train(args) -> str:
    config = parse_config(args.config)
    data = datagen.load_directory(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(config), encoding="utf-8")
    model, metrics = harness.train(config, data)
    metrics.to_csv(out / "metrics.csv")
    save_checkpoint(model, out / "model.ckpt")
    summary = {split: dataclasses.asdict(r) for split, r in metrics.final.items()}
    summary["best_epoch"] = metrics.best_epoch
    summary["metric"] = metrics.metric
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    test = metrics.final.get("test") or metrics.final["valid"]
    return (f"train: {metrics.metric} {test.mean:.4f} +- {test.stderr:.4f} "
            f"(best epoch {metrics.best_epoch}) -> {out}")


def cmd_eval(args) -> str:
    model = load_checkpoint(args.model)
    data = datagen.load_directory(args.data)
    samples = data[args.split]
    if not samples:
        raise CoGnnError(f"--split {args.split}: no samples in {args.data}")
    result = harness.evaluate(model, samples, args.seeds)
    metric = "mae" if model.config.task == "node-regression" else "accuracy"
    if args.out:
        Path(args.out).write_text(json.dumps({"metric": metric, "split": args.split, **dataclasses.asdict(result)},
                                             indent=2), encoding="utf-8")
    return f"eval: {args.split} {metric} {result.mean:.4f} +- {result.stderr:.4f} over {len(result.values)} seeds"


def cmd_trace(args) -> str:
    model = load_checkpoint(args.model)
    samples = datagen.load_directory(args.data)[args.split]
    if not 0 <= args.graph_index < len(samples):
        raise CoGnnError(f"--graph-index {args.graph_index} outside 0..{len(samples) - 1}")
    graph = samples[args.graph_index].graph
    path, edges = harness.record_trace(model, graph, rngmod.stream(args.seed, "eval"), args.out)
    return f"trace: graph {args.graph_index} ({graph.num_nodes} nodes) -> {path}, {edges}"


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(float(s)) for s in text.split(",") if s.strip()]
    except ValueError:
        raise CoGnnError(f"--sizes: expected comma-separated edge counts, got {text!r}") from None
    if len(sizes) < 2 or min(sizes) < 1:
        raise CoGnnError("--sizes: need at least two positive edge counts")
    return sizes


def cmd_bench(args) -> str:
    config = parse_config(args.config)
    sizes = _sizes(args.sizes)
    report = harness.runtime_scaling(config, sizes, args.repeats)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("num_edges,num_nodes,seconds,macs_action,macs_environment,macs_total\n")
        for row in report["rows"]:
            fh.write(f"{row['num_edges']},{row['num_nodes']},{row['seconds']!r},"
                     f"{row['action']},{row['environment']},{row['total']}\n")
    return f"bench: {len(sizes)} sizes, slope {report['slope']:.3e} s/edge, R^2 {report['r2']:.4f} -> {out}"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coopgnn", description="Cooperative GNNs on synthetic graph tasks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--dataset", required=True, choices=["root-neighbors", "cycles"])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--per-split", type=int, default=1000, help="trees per split (root-neighbors only)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", required=True, choices=list(datagen.SPLITS))
    e.add_argument("--seeds", type=int, default=harness.DEFAULT_EVAL_SEEDS)
    e.add_argument("--out", help="optional JSON report")
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("trace", help="record per-node actions and kept edges for one graph")
    tr.add_argument("--model", required=True)
    tr.add_argument("--graph-index", type=int, required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--data", required=True, help="dataset directory holding the graph")
    tr.add_argument("--split", default="test", choices=list(datagen.SPLITS))
    tr.add_argument("--seed", type=int, default=0, help="evaluation seed for action sampling")
    tr.set_defaults(func=cmd_trace)

    b = sub.add_parser("bench", help="time one layer against edge count")
    b.add_argument("--config", required=True)
    b.add_argument("--sizes", required=True, help="comma-separated edge counts, e.g. 100,1000,10000")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        print(args.func(args))
    except (CoGnnError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

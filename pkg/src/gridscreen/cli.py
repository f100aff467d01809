"""Command-line entry point: ``gridscreen <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetError, generate_dataset, read_dataset, write_dataset
from .evaluate import (Thresholds, benchmark, compute_metrics, confusion, metrics_csv,
                       oracle_screen, plot_data, screen, to_json)
from .grid import CaseError, load_case
from .models import (CheckpointError, LossWeights, TrainingDiverged, build_model,
                     load_checkpoint, save_checkpoint, train)
from .topology import REFERENCE, count_contingencies, enumerate_contingencies, sample_topologies

log = logging.getLogger("gridscreen")

WEIGHT_KEYS = {"v", "delta", "q", "eps", "gamma"}
TRAIN_KEYS = {"lr", "standardize"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["set"] = _parse_sets(args.set) if getattr(args, "set", None) else {}
    cfg["version"] = __version__
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, name, text):
    if args.out:
        p = _out_dir(args) / name
        p.write_text(text, encoding="utf-8")
        print(f"wrote {p}")
    else:
        print(text)


def _workers(args) -> int:
    return max(1, args.threads or os.cpu_count() or 1)


def _topologies(case, args):
    topos = [REFERENCE]
    for k in range(1, args.k + 1):
        topos += enumerate_contingencies(case, k)
    if args.only_k:
        topos = [t for t in topos if t.k == args.k]
    if args.beta:
        topos = sample_topologies(topos, args.beta, args.seed)
    return topos


# -- subcommands -----------------------------------------------------------

def cmd_parse(args):
    case = load_case(args.case)
    _emit(args, "case.json", json.dumps({"config": _config(args), **case.summary()}, indent=2))


def cmd_enumerate(args):
    case = load_case(args.case)
    topos = enumerate_contingencies(case, args.k)
    counts = {str(k): count_contingencies(case, k) for k in range(1, args.k)}
    counts[str(args.k)] = len(topos)
    print(f"eligible: {len(topos)}")
    if args.out:
        doc = {"config": _config(args), "case": case.name, "k": args.k, "counts": counts,
               "topologies": [t.id for t in topos]}
        _emit(args, f"topologies_k{args.k}.json", json.dumps(doc, indent=2))


def cmd_generate(args):
    case = load_case(args.case)
    topos = _topologies(case, args)
    ds, skipped = generate_dataset(case, topos, args.samples, args.seed, workers=_workers(args))
    ds.manifest["config"] = _config(args)
    path = Path(args.out or f"{case.name}_k{args.k}.tgnn")
    if path.suffix != ".tgnn":
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"{case.name}_k{args.k}.tgnn"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(path, ds)
    print(f"wrote {path}: {len(ds)} samples over {len(topos)} topologies, {skipped} skipped")


def _hyper_and_weights(sets):
    weights = LossWeights(**{k: float(v) for k, v in sets.items() if k in WEIGHT_KEYS})
    train_kw = {k: v for k, v in sets.items() if k in TRAIN_KEYS}
    hyper = {k: v for k, v in sets.items() if k not in WEIGHT_KEYS | TRAIN_KEYS}
    return hyper, weights, train_kw


def cmd_train(args):
    case = load_case(args.case)
    ds = read_dataset(args.data)
    hyper, weights, train_kw = _hyper_and_weights(_parse_sets(args.set))
    try:
        model = build_model(args.model, case, seed=args.seed, **hyper)
    except TypeError as e:
        raise UsageError(f"bad --set for {args.model}: {e}") from None
    out = _out_dir(args)
    try:
        model, hist = train(model, ds, case, epochs=args.epochs, batch=args.batch,
                            lr=float(train_kw.get("lr", 1e-3)), weights=weights, seed=args.seed,
                            standardize=bool(train_kw.get("standardize", False)))
    except TrainingDiverged as e:
        save_checkpoint(out / f"{args.model}_diverged.tgck", e.model, {"config": _config(args)})
        raise
    extra = {"config": _config(args), "weights": weights.to_dict(),
             "final_train_loss": hist.train_loss[-1] if hist.train_loss else None,
             "final_val_loss": hist.val_loss[-1] if hist.val_loss else None}
    save_checkpoint(out / f"{args.model}.tgck", model, extra)
    (out / f"{args.model}_history.csv").write_text(
        f"# config: {json.dumps(_config(args))}\n" + hist.to_csv())
    print(f"wrote {out / f'{args.model}.tgck'} ({model.num_parameters()} parameters)")


def _split(ds, which):
    if which == "train":
        return ds.train_split()
    if which == "test":
        return ds.test_split()
    return ds


def cmd_eval(args):
    case = load_case(args.case)
    model, header = load_checkpoint(args.checkpoint, case)
    ds = _split(read_dataset(args.data), args.split)
    topos = ds.sample_topologies()
    rep = compute_metrics(model.predict(ds.x, topos), ds.y, case, topos)
    doc = {"config": _config(args), "seed": args.seed, "model": header["kind"],
           "num_parameters": header["num_parameters"], "metrics": rep.to_dict()}
    _emit(args, "metrics.json", to_json(doc))
    if args.out:
        out = _out_dir(args)
        (out / "metrics.csv").write_text(metrics_csv(rep))
        for name, text in plot_data(rep, topos).items():
            (out / name).write_text(text)


def cmd_screen(args):
    case = load_case(args.case)
    model, _ = load_checkpoint(args.checkpoint, case)
    ds = _split(read_dataset(args.data), args.split)
    topos = ds.sample_topologies()
    th = Thresholds(args.vmin, args.vmax, args.rate_scale)
    verdicts, ranked = screen(model, case, ds.x, topos, th)
    nr, _ = oracle_screen(case, ds.y, topos, th)
    doc = {"config": _config(args), "seed": args.seed, "thresholds": th,
           "flagged": len(ranked), "scenarios": len(verdicts),
           "confusion_vs_nr": confusion(verdicts, nr),
           "ranked": ranked[:args.top] if args.top else ranked}
    _emit(args, "screen.json", to_json(doc))


def cmd_bench(args):
    case = load_case(args.case)
    model, _ = load_checkpoint(args.checkpoint, case)
    ds = _split(read_dataset(args.data), args.split)
    rep = benchmark(case, ds.x, ds.sample_topologies(), model, workers=_workers(args))
    _emit(args, "bench.json", to_json({"config": _config(args), "seed": args.seed, **rep}))


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gridscreen", description="Topology-aware surrogate power-flow screening.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)

    def add(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--case", required=True, help="MATPOWER file or builtin name (case14, ...)")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", default=None, help="output file or directory")
        s.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override loss weights (v, delta, q, eps, gamma), lr, or model widths")
        s.set_defaults(func=func)
        return s

    add("parse", cmd_parse, "print a case summary")
    s = add("enumerate", cmd_enumerate, "list connectivity-preserving N-k contingencies")
    s.add_argument("--k", type=int, required=True)
    s = add("generate", cmd_generate, "sample operating points and label them with NR")
    s.add_argument("--k", type=int, default=1, help="include N-0 through N-k")
    s.add_argument("--only-k", action="store_true", help="keep only the N-k topologies")
    s.add_argument("--samples", type=int, default=1000, help="samples per topology")
    s.add_argument("--beta", type=int, default=None, help="randomly keep this many topologies")
    s = add("train", cmd_train, "train a surrogate")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=["gdnn", "evgnn"], default="gdnn")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch", type=int, default=64)
    for name, func, help_ in (("eval", cmd_eval, "accuracy metrics on a dataset"),
                              ("screen", cmd_screen, "flag voltage and loading violations"),
                              ("bench", cmd_bench, "time NR against batched inference")):
        s = add(name, func, help_)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--split", choices=["train", "test", "all"],
                       default="all" if name == "bench" else "test")
        if name == "screen":
            s.add_argument("--vmin", type=float, default=None)
            s.add_argument("--vmax", type=float, default=None)
            s.add_argument("--rate-scale", type=float, default=1.0)
            s.add_argument("--top", type=int, default=0, help="keep only the N most severe")
    return p


HINTS = {
    FileNotFoundError: "check the path, or use a builtin case name such as case14",
    CaseError: "the case file could not be used; check it is a MATPOWER v2 case",
    DatasetError: "regenerate the dataset with `gridscreen generate`",
    CheckpointError: "retrain with `gridscreen train` for this case",
    TrainingDiverged: "lower the learning rate (--set lr=...) or enable --set standardize=true",
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.cmd is None:
            raise UsageError("a subcommand is required")
        if getattr(args, "k", 0) is not None and getattr(args, "k", 0) < 0:
            raise UsageError("--k must be non-negative")
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(str(e), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        hint = next((h for cls, h in HINTS.items() if isinstance(e, cls)), None)
        print(f"error: {e}", file=sys.stderr)
        if hint:
            print(f"hint: {hint}", file=sys.stderr)
        if args.verbose:
            raise
        return 2
    return 0


def main():
    sys.exit(run_cli())

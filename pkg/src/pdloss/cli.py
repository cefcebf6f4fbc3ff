"""Command-line entry point: ``pdloss {gen-data,train,eval,analyze,gradcheck}``.

Exit codes: 0 success, 1 runtime or check failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from . import dataio
from .backbone import MlpConfig, embed_array, load_backbone
from .errors import ConfigError, ContractError, PDLossError
from .gradcheck import run_gradchecks
from .stats_eval import DEFAULT_BINS, DEFAULT_DISTANCE_RANGE, DEFAULT_K, analyze, recall_at_k
from .trainer import TrainConfig, fit

log = logging.getLogger("pdloss")

EXPERIMENT_KEYS = {"data", "model", "train", "output_dir"}
DATA_KEYS = {"features", "labels", "val_features", "val_labels", "val_fraction", "split_seed"}
MODEL_KEYS = {"input_dim", "hidden_dims", "embedding_dim", "activation", "seed"}


@dataclass
class Experiment:
    train: TrainConfig
    model: dict
    features: Path
    labels: Path
    val_features: Path | None
    val_labels: Path | None
    val_fraction: float
    split_seed: int
    output_dir: Path


def _reject_unknown(section: str, d: dict, allowed: set[str]) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")


def load_experiment(path, seed_override: int | None = None, out_override=None) -> Experiment:
    """Parse an experiment file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read experiment file {path}: {exc}") from None
    _reject_unknown("experiment", doc, EXPERIMENT_KEYS)
    data = doc.get("data", {})
    _reject_unknown("data", data, DATA_KEYS)
    model = dict(doc.get("model", {}))
    _reject_unknown("model", model, MODEL_KEYS)
    train = dict(doc.get("train", {}))
    if seed_override is not None:
        train["seed"] = seed_override
    base = path.parent

    def resolve(p):
        return None if p is None else (base / p).resolve()

    if "features" not in data or "labels" not in data:
        raise ConfigError("data section needs 'features' and 'labels'")
    if ("val_features" in data) != ("val_labels" in data):
        raise ConfigError("give both val_features and val_labels, or neither")
    out = out_override if out_override is not None else resolve(doc.get("output_dir", "run"))
    return Experiment(
        train=TrainConfig.from_dict(train),
        model=model,
        features=resolve(data["features"]),
        labels=resolve(data["labels"]),
        val_features=resolve(data.get("val_features")),
        val_labels=resolve(data.get("val_labels")),
        val_fraction=float(data.get("val_fraction", 0.1)),
        split_seed=int(data.get("split_seed", 0)),
        output_dir=Path(out),
    )


def _dump(obj, dest=None, quiet=False) -> None:
    text = json.dumps(_finite(obj), indent=2, sort_keys=True)
    if dest is not None:
        Path(dest).parent.mkdir(parents=True, exist_ok=True)
        Path(dest).write_text(text + "\n")
    if not quiet:
        print(text)


def _finite(obj):
    # JSON has no infinity; the d' sentinel is emitted as the string "inf"
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def _parse_k(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return ks


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    if args.classes < 2:
        raise ConfigError(f"--classes must be >= 2, got {args.classes}")
    ds = dataio.gen_synthetic(args.classes, args.per_class, args.dim, args.sigma, args.seed or 0)
    out = args.out or args.out_dir or "."
    paths = dataio.save_dataset(ds, out)
    if not args.quiet:
        print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


def cmd_train(args) -> int:
    exp = load_experiment(args.experiment, args.seed, args.out_dir)
    ds = dataio.load_dataset(exp.features, exp.labels)
    if exp.val_features is not None:
        train_ds, val_ds = ds, dataio.load_dataset(exp.val_features, exp.val_labels)
    else:
        train_ds, val_ds = dataio.split(ds, exp.val_fraction, exp.split_seed)
    model = MlpConfig(**{"input_dim": ds.dim, **exp.model})
    result = fit(exp.train, model, train_ds, val_ds, out_dir=exp.output_dir)
    if not args.quiet:
        last = result.logs[-1]
        print(json.dumps(_finite({
            "output_dir": str(exp.output_dir),
            "final_loss": last.mean_loss,
            "initial_validation": result.initial_validation,
            "final_validation": last.validation,
        }), indent=2))
    return 0


def _embed_checkpoint(args):
    cfg, params, _ = load_backbone(args.checkpoint)
    ds = dataio.load_dataset(args.features, args.labels)
    if ds.dim != cfg.input_dim:
        raise ContractError(f"dataset has {ds.dim} features but checkpoint expects {cfg.input_dim}")
    return embed_array(params, ds.features), ds


def cmd_eval(args) -> int:
    Z, ds = _embed_checkpoint(args)
    report = recall_at_k(Z, ds.labels, args.k).to_dict()
    _dump(report, args.out, args.quiet)
    return 0


def cmd_analyze(args) -> int:
    Z, ds = _embed_checkpoint(args)
    ks = [k for k in args.k if k < len(ds)]
    doc = analyze(Z, ds.labels, args.bins, tuple(args.range), ks)
    _dump(doc, args.out, args.quiet)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.seed or 0, args.seeds)
    failed = [r.name for r in results if not r.passed(args.tolerance)]
    if not args.quiet:
        for r in results:
            status = "ok" if r.passed(args.tolerance) else "FAIL"
            print(f"{r.name:24s} {r.max_rel_error:.3e}  {status}")
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "gradcheck.json").write_text(json.dumps(
            {"tolerance": args.tolerance, "checks": {r.name: r.max_rel_error for r in results}}, indent=2) + "\n")
    if failed:
        print(f"gradcheck failed (tolerance {args.tolerance:g}): {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--seed", type=int, default=None, help="random seed (overrides file settings)")
    glob.add_argument("--out-dir", default=None, help="output directory")
    glob.add_argument("--quiet", action="store_true", help="suppress stdout reports")

    p = argparse.ArgumentParser(prog="pdloss", description=__doc__.splitlines()[0], parents=[glob])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic spherical-cluster dataset")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--per-class", type=int, default=50)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--sigma", type=float, default=0.3)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from an experiment JSON file")
    t.add_argument("experiment")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "Recall@K of a checkpoint"),
                                 ("analyze", cmd_analyze, "genuine/impostor distance analysis")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("checkpoint")
        e.add_argument("--features", required=True)
        e.add_argument("--labels", required=True)
        e.add_argument("--k", type=_parse_k, default=list(DEFAULT_K))
        e.add_argument("--out", default=None, help="also write the JSON report here")
        if name == "analyze":
            e.add_argument("--bins", type=int, default=DEFAULT_BINS)
            e.add_argument("--range", type=float, nargs=2, default=list(DEFAULT_DISTANCE_RANGE),
                           metavar=("LO", "HI"))
        e.set_defaults(func=func)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--seeds", type=int, default=5)
    c.set_defaults(func=cmd_gradcheck)

    # global flags are accepted after the subcommand too
    for sp in (g, t, sub.choices["eval"], sub.choices["analyze"], c):
        for action in glob._actions:
            sp.add_argument(*action.option_strings, dest=action.dest, default=argparse.SUPPRESS,
                            help=argparse.SUPPRESS, **_action_kwargs(action))
    return p


def _action_kwargs(action) -> dict:
    if isinstance(action, argparse._StoreTrueAction):
        return {"action": "store_true"}
    return {"type": action.type}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (PDLossError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

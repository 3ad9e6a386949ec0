"""Command-line entry point: ``archgrow train|eval|transform-ts|export-dot``.

Settings come from an optional ``key = value`` file (``--config``); command
line flags override it. Training keys are the ``TrainConfig`` field names
(``budget.time_limit`` etc.); data and model keys are prefixed ``data.`` and
``model.``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from archgrow.data import (
    Dataset,
    as_channels,
    as_multi_input,
    build_mts_model,
    load_idx,
    load_timeseries_csv,
    mts_to_images,
    write_idx,
)
from archgrow.errors import ArchGrowError
from archgrow.graph import new_base_model
from archgrow.mcts import write_search_log
from archgrow.persist import export_dot, load_model, model_hash, save_model, write_atomic
from archgrow.propagation import evaluate
from archgrow.report import plot_history, plot_recurrence
from archgrow.training import TrainConfig, make_simset, stratified_split, train

log = logging.getLogger("archgrow")

MANIFEST_VERSION = 1

# flag dest -> config key
TRAIN_FLAGS = {
    "seed": "seed",
    "policy": "policy",
    "orchestrator": "orchestrator",
    "score_mode": "score_mode",
    "lr_mode": "lr_mode",
    "generations": "generations",
    "epochs": "epochs",
    "lr": "lr_max",
    "batch_size": "batch_size",
    "time_limit": "budget.time_limit",
    "max_iterations": "budget.max_iterations",
    "rollout_depth": "budget.rollout_depth",
    "sim_epochs": "budget.sim_epochs",
}
DATA_FLAGS = {
    "images": "data.images",
    "labels": "data.labels",
    "test_images": "data.test_images",
    "test_labels": "data.test_labels",
    "ts_csv": "data.ts_csv",
    "test_fraction": "data.test_fraction",
    "limit": "data.limit",
    "shared_input": "data.shared_input",
    "eps": "data.eps",
    "quantile": "data.quantile",
    "max_side": "data.max_side",
    "def_neu": "model.def_neu",
    "conv_channels": "model.conv_channels",
}


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class DataSpec:
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    ts_csv: str | None = None
    test_fraction: float = 0.2
    limit: int | None = None
    shared_input: bool = False
    eps: float | None = None
    quantile: float = 0.1
    max_side: int | None = None
    def_neu: int = 10
    conv_channels: int = 4

    @classmethod
    def from_flat(cls, values: dict[str, str]) -> DataSpec:
        kw = {}
        for key, raw in values.items():
            name = key.split(".", 1)[1]
            if name not in cls.__dataclass_fields__:
                raise ValueError(f"unknown config key {key!r}")
            default = cls.__dataclass_fields__[name].default
            if raw is None or str(raw).lower() == "none":
                kw[name] = None
            elif isinstance(default, bool):
                kw[name] = str(raw).lower() in ("true", "1", "yes")
            elif name in ("test_fraction", "eps", "quantile"):
                kw[name] = float(raw)
            elif name in ("limit", "max_side", "def_neu", "conv_channels"):
                kw[name] = int(raw)
            else:
                kw[name] = str(raw)
        return cls(**kw)

    def to_flat(self) -> dict[str, str]:
        out = {}
        for name in self.__dataclass_fields__:
            prefix = "model." if name in ("def_neu", "conv_channels") else "data."
            out[prefix + name] = "none" if getattr(self, name) is None else str(getattr(self, name))
        return out


def _ts_dataset(spec: DataSpec, path) -> Dataset:
    per_dim = mts_to_images(load_timeseries_csv(path), eps=spec.eps, quantile=spec.quantile,
                            max_side=spec.max_side)
    return as_channels(per_dim) if spec.shared_input else as_multi_input(per_dim)


def load_datasets(spec: DataSpec, rng) -> tuple[Dataset, Dataset]:
    if spec.ts_csv:
        full = _ts_dataset(spec, spec.ts_csv)
    elif spec.images and spec.labels:
        full = load_idx(spec.images, spec.labels)
    else:
        raise ValueError("no training data: pass --images/--labels or --ts-csv")
    if spec.test_images and spec.test_labels:
        test = load_idx(spec.test_images, spec.test_labels, full.class_count)
        train_set = full
    else:
        train_set, test = stratified_split(full, spec.test_fraction, rng)
    if spec.limit and spec.limit < len(train_set):
        train_set, _ = stratified_split(train_set, 1 - spec.limit / len(train_set), rng)
    return train_set, test


def _build_model(spec: DataSpec, ds: Dataset, rng):
    shapes = ds.input_shapes
    if len(shapes) > 1 or spec.ts_csv:
        side = shapes[0][-1]
        dims = shapes[0][0] if len(shapes) == 1 else len(shapes)
        return build_mts_model(dims, side, ds.class_count, len(shapes) == 1, spec.def_neu, rng,
                               spec.conv_channels)
    return new_base_model(shapes[0], spec.def_neu, ds.class_count, rng, spec.conv_channels)


def _collect(args, config: dict[str, str]):
    values = dict(config)
    for dest, key in {**TRAIN_FLAGS, **DATA_FLAGS}.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = str(v)
    train_kv = {k: v for k, v in values.items() if not k.startswith(("data.", "model."))}
    data_kv = {k: v for k, v in values.items() if k.startswith(("data.", "model."))}
    return TrainConfig.from_flat(train_kv), DataSpec.from_flat(data_kv)


def cmd_train(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        config = {**manifest["config"], **manifest["data"]}
    else:
        config = read_config(args.config) if args.config else {}
    cfg, spec = _collect(args, config)
    out = Path(args.out)
    (out / "dot").mkdir(parents=True, exist_ok=True)

    data_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    train_set, test_set = load_datasets(spec, data_rng)
    simset = make_simset(train_set, cfg.simset_per_class, data_rng)
    model = _build_model(spec, train_set, data_rng)

    search_log = out / "search.csv"
    search_log.unlink(missing_ok=True)
    write_atomic(out / "dot" / "gen_000_initial.dot", export_dot(model))

    def snapshot(gen, m, history):
        write_atomic(out / "dot" / f"gen_{gen + 1:03d}.dot", export_dot(m))
        log.info("generation %d done: test acc %.4f", gen, history.epochs[-1].test_acc)

    model, history = train(model, train_set, test_set, simset, cfg, on_generation=snapshot,
                           search_log=search_log)
    write_atomic(out / "model.bin", save_model(model))
    write_atomic(out / "history.csv", history.to_csv())
    plot_history(history, out / "history.png", title=f"{cfg.policy.value}, seed {cfg.seed}")
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_flat(),
        "data": spec.to_flat(),
        "fingerprints": {
            "train": train_set.fingerprint(),
            "test": test_set.fingerprint(),
            "simset": simset.fingerprint(),
        },
        "actions": [{"generation": g.generation, "action": g.action}
                    for g in history.generations if g.action],
        "artifacts": {
            "model": "model.bin",
            "history": "history.csv",
            "figure": "history.png",
            "dot": sorted(p.name for p in (out / "dot").glob("*.dot")),
            "search_log": search_log.name if search_log.exists() else None,
        },
        "model_sha256": model_hash(model),
        "final_test_acc": history.final_test_acc,
    }
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"final test accuracy {history.final_test_acc:.4f}; wrote {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(Path(args.model).read_bytes())
    config = read_config(args.config) if args.config else {}
    _, spec = _collect(args, config)
    if spec.ts_csv:
        ds = _ts_dataset(spec, spec.ts_csv)
    elif spec.images and spec.labels:
        ds = load_idx(spec.images, spec.labels)
    else:
        raise ValueError("no evaluation data: pass --images/--labels or --ts-csv")
    acc, mean_loss = evaluate(model, ds)
    print(f"accuracy {acc:.4f} loss {mean_loss:.4f} samples {len(ds)}")
    return 0


def cmd_transform_ts(args) -> int:
    ds = load_timeseries_csv(args.input)
    per_dim = mts_to_images(ds, eps=args.eps, quantile=args.quantile, max_side=args.max_side,
                            standardize=not args.raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for d, images in enumerate(per_dim):
        write_idx(images.inputs[0][:, 0] * 255, images.labels,
                  out / f"dim{d}-images-idx3-ubyte", out / f"dim{d}-labels-idx1-ubyte")
    if args.figure:
        plot_recurrence(ds.series[0], [p.inputs[0][0, 0] for p in per_dim], out / "sample0.png",
                        title=f"sample 0, class {ds.labels[0]}")
    print(f"wrote {ds.dims} recurrence-plot datasets of {len(ds)} samples to {out}")
    return 0


def cmd_export_dot(args) -> int:
    text = export_dot(load_model(Path(args.model).read_bytes()))
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _add_data_flags(p):
    p.add_argument("--images", help="IDX image file (optionally .gz)")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--ts-csv", dest="ts_csv", help="multivariate time-series CSV")
    p.add_argument("--shared-input", dest="shared_input", action="store_const", const=True,
                   help="feed all series dimensions to one input as channels")
    p.add_argument("--eps", type=float, help="fixed recurrence threshold")
    p.add_argument("--quantile", type=float, help="per-series distance quantile used as threshold")
    p.add_argument("--max-side", dest="max_side", type=int, help="downsample recurrence plots")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="archgrow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a growing model")
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--manifest", help="re-run the settings recorded in a manifest.json")
    p.add_argument("--out", default="run", help="output directory")
    _add_data_flags(p)
    p.add_argument("--test-images", dest="test_images")
    p.add_argument("--test-labels", dest="test_labels")
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--limit", type=int, help="stratified subsample of the training split")
    p.add_argument("--def-neu", dest="def_neu", type=int)
    p.add_argument("--conv-channels", dest="conv_channels", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=["mcts", "greedy", "random"])
    p.add_argument("--orchestrator", choices=["constant", "progress_check", "overfit"])
    p.add_argument("--score-mode", dest="score_mode", choices=["accuracy", "loss"])
    p.add_argument("--lr-mode", dest="lr_mode", choices=["progressive", "constant"])
    p.add_argument("--generations", type=int)
    p.add_argument("--epochs", type=int, help="epochs per generation")
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--time-limit", dest="time_limit", type=float, help="search seconds per generation")
    p.add_argument("--max-iterations", dest="max_iterations", type=int,
                   help="fixed search iteration count instead of the clock (reproducible)")
    p.add_argument("--rollout-depth", dest="rollout_depth", type=int)
    p.add_argument("--sim-epochs", dest="sim_epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="print a saved model's accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transform-ts", parents=[common], help="turn a time-series CSV into recurrence-plot IDX files")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--quantile", type=float, default=0.1)
    p.add_argument("--max-side", dest="max_side", type=int)
    p.add_argument("--raw", action="store_true", help="skip per-series standardization")
    p.add_argument("--figure", action="store_true", help="also render sample 0 as a PNG")
    p.set_defaults(func=cmd_transform_ts)

    p = sub.add_parser("export-dot", parents=[common], help="write a saved model's graph as Graphviz DOT")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_dot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, ArchGrowError) as exc:
        print(f"archgrow {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

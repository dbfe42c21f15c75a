"""Command-line entry point: ``tical {gen,train,eval,inspect}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (``#`` starts a comment), then ``--set key=value``
pairs, then the dedicated flags.  Later sources win.  Unknown keys are an
error.  All settings are resolved and validated before anything is written.

Exit codes: 0 success, 2 configuration error (including checkpoint/data
mismatch and unready anchor lists), 3 numerical failure, 4 I/O or file
format error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, datasyn
from .emotree import TreeSpec, load_tree_spec
from .errors import (CompatibilityError, ConfigError, FormatError, InvalidInputError,
                     InvalidSpecError, NotReadyError, NumericalError)
from .metrics import compute_metrics, format_record
from .trainer import ABLATIONS, TrainConfig, Trainer

log = logging.getLogger("tical")

SPLITS = ("train", "val", "test")
SUBSETS = ("all", "conflict", "consistent")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _names(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(",", " ").split() if v != "none")


# key -> (parser, default)
KEYS = {
    # data generation
    "n_classes": (int, 7),
    "dims": (_ints, (16, 12, 8)),
    "separation": (float, 4.0),
    "noise": (float, 0.5),
    "p_conflict": (float, 0.3),
    "n_samples": (int, 6000),
    "split": (_floats, (0.7, 0.1, 0.2)),
    # training
    "seed": (int, 0),
    "epochs": (int, 30),
    "batch_size": (int, 16),
    "lr": (float, 1e-4),
    "lr_decay": (float, 0.005),
    "lambda": (int, 5),
    "theta": (float, 0.8),
    "hasl_capacity": (int, 128),
    "min_fill": (int, 8),
    "hasl_balanced": (_bool, False),
    "kappa0": (float, 0.5),
    "task": (str, "ordinal"),
    "hidden": (int, 64),
    "t": (float, 0.2),
    "k": (float, 0.5),
    "rho": (float, 4.0),
    "discrepancy_form": (str, "symmetric"),
    "ablate": (_names, ()),
    "tree_scheme": (str, "ordinal-chain"),
    "tree_file": (str, ""),
    # paths and selection
    "data": (str, "data"),
    "out": (str, "out"),
    "checkpoint": (str, ""),
    "split_name": (str, "test"),
    "subset": (str, "all"),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def synthetic_spec(self) -> datasyn.SyntheticSpec:
        v = self.values
        return datasyn.SyntheticSpec(v["n_classes"], v["dims"], v["separation"], v["noise"],
                                     v["p_conflict"], v["n_samples"], v["seed"], v["split"])

    def tree_spec(self, n_classes: int) -> TreeSpec:
        if self.values["tree_file"]:
            spec = load_tree_spec(self.values["tree_file"])
            if spec.n_classes != n_classes:
                raise ConfigError(f"tree file has {spec.n_classes} classes, data has {n_classes}")
            return spec
        return TreeSpec(self.values["tree_scheme"], n_classes)

    def train_config(self, n_classes: int | None = None) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["epochs"], batch_size=v["batch_size"], lr=v["lr"], lr_decay=v["lr_decay"],
            lam=v["lambda"], theta=v["theta"], hasl_capacity=v["hasl_capacity"],
            min_fill=v["min_fill"], hasl_balanced=v["hasl_balanced"], kappa0=v["kappa0"],
            seed=v["seed"], task=v["task"], hidden=v["hidden"], t=v["t"], k=v["k"], rho=v["rho"],
            discrepancy_form=v["discrepancy_form"],
            tree=self.tree_spec(n_classes or v["n_classes"]), ablate=v["ablate"])


def _parse_value(key: str, text: str, origin: str):
    if key not in KEYS:
        raise ConfigError(f"{origin}: unknown key {key!r}")
    try:
        return KEYS[key][0](text)
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {key!r}: {exc}") from None


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        out[key] = _parse_value(key, value.strip(), f"{origin}:{lineno}")
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {key: default for key, (_, default) in KEYS.items()}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        values.update(parse_config_text(text, args.config))
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key = key.strip().replace("-", "_")
        values[key] = _parse_value(key, value.strip(), "--set")
    for key in ("seed", "epochs", "lambda", "theta", "hasl_capacity", "t", "k", "rho",
                "p_conflict", "out", "data", "checkpoint", "subset", "split_name"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if args.ablate:
        values["ablate"] = tuple(a for a in args.ablate if a != "none")
    if values["subset"] not in SUBSETS:
        raise ConfigError(f"subset must be one of {SUBSETS}")
    if values["split_name"] not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}")
    return RunConfig(values)


# --------------------------------------------------------------------------
# commands

def _read_split(cfg: RunConfig, split: str) -> datasyn.Dataset:
    return datasyn.read_dataset(Path(cfg["data"]) / f"{split}.ticd")


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else Path(cfg["out"]) / "checkpoint.tick"


def cmd_gen(cfg: RunConfig) -> int:
    spec = cfg.synthetic_spec()
    parts = datasyn.split_dataset(datasyn.generate(spec), spec.split)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        datasyn.write_dataset(parts[name], out / f"{name}.ticd")
    counts = {name: len(parts[name]) for name in SPLITS}
    (out / "manifest.txt").write_text(datasyn.manifest_text(spec, counts))
    for name in SPLITS:
        print(f"{name}: {counts[name]} samples ({int(parts[name].conflict_mask.sum())} conflict)")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    train = _read_split(cfg, "train")
    val = _read_split(cfg, "val")
    tcfg = cfg.train_config(train.n_classes)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "log.jsonl"
    log_path.write_text("")
    trainer = Trainer(tcfg, train.dims, train.n_classes)
    reports = trainer.fit(train, val, log_path=log_path)
    ckpt = _checkpoint_path(cfg)
    checkpoint.save_checkpoint(trainer, ckpt)
    last = reports[-1] if reports else None
    if last is not None and last.val is not None:
        print(f"epoch {last.epoch}: val {format_record(last.val)}")
    print(f"wrote {ckpt} and {log_path}")
    return 0


def _load_for(cfg: RunConfig):
    data = _read_split(cfg, cfg["split_name"])
    trainer = checkpoint.load_checkpoint(_checkpoint_path(cfg))
    checkpoint.check_compatible(trainer, data.dims, data.n_classes)
    return trainer, data


def _subset_mask(data: datasyn.Dataset, subset: str) -> np.ndarray:
    if subset == "conflict":
        return data.conflict_mask
    if subset == "consistent":
        return ~data.conflict_mask
    return np.ones(len(data), dtype=bool)


def cmd_eval(cfg: RunConfig) -> int:
    trainer, data = _load_for(cfg)
    subset = cfg["subset"]
    # Evaluate the whole split so every sample sees the same typicality
    # batches regardless of the subset, then score the selected rows.
    ev = trainer.evaluate(data)
    mask = _subset_mask(data, subset)
    if not mask.any():
        raise InvalidInputError(f"subset {subset!r} of split {cfg['split_name']!r} is empty")
    metrics = compute_metrics(ev.y_true[mask], ev.y_pred[mask], trainer.cfg.task,
                              trainer.params.label_scale, trainer.n_classes)
    metrics["mean_kappa"] = float(ev.kappa[mask].mean())
    metrics["subset"] = subset
    line = format_record(metrics)
    print(line)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / f"metrics_{cfg['split_name']}_{subset}.txt").write_text(line + "\n")
    return 0


INSPECT_COLUMNS = ("sample_id", "label", "gen_l", "gen_v", "gen_a", "y_l", "y_v", "y_a",
                   "tau_l", "tau_v", "tau_a", "d_label", "kappa",
                   "pred_ep", "pred_ci", "pred_ac", "pred_final")


def cmd_inspect(cfg: RunConfig) -> int:
    trainer, data = _load_for(cfg)
    if not trainer.hasl_ready() or trainer.epoch <= trainer.cfg.lam:
        raise NotReadyError("checkpoint is not past the early phase with filled anchor lists")
    ev = trainer.evaluate(data)
    rep = ev.report
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"inspect_{cfg['split_name']}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(INSPECT_COLUMNS)
        for i in range(len(data)):
            w.writerow([int(data.sample_ids[i]), int(data.label[i]), *map(int, data.gen_labels[i]),
                        *map(int, rep.pseudo[i]), *(repr(float(v)) for v in rep.tau[i]),
                        repr(float(rep.d_label[i])), repr(float(ev.kappa[i])),
                        int(ev.stage_pred["ep"][i]), int(ev.stage_pred["ci"][i]),
                        int(ev.stage_pred["ac"][i]), int(ev.y_pred[i])])
    print(f"wrote {len(data)} rows to {path}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "inspect": cmd_inspect}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any setting")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lambda", dest="lambda", type=int, help="last epoch of the early phase")
    common.add_argument("--theta", type=float, help="anchor admission confidence threshold")
    common.add_argument("--hasl-capacity", dest="hasl_capacity", type=int)
    common.add_argument("--t", type=float)
    common.add_argument("--k", type=float)
    common.add_argument("--rho", type=float)
    common.add_argument("--p-conflict", dest="p_conflict", type=float)
    common.add_argument("--ablate", action="append", choices=ABLATIONS + ("none",))
    common.add_argument("--subset", choices=SUBSETS)
    common.add_argument("--split", dest="split_name", choices=SPLITS)
    common.add_argument("--data", help="directory holding train/val/test .ticd files")
    common.add_argument("--checkpoint", help="checkpoint path (default OUT/checkpoint.tick)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tical", description="Consistency-aware multimodal classifier.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train and write a checkpoint and run log")
    sub.add_parser("eval", parents=[common], help="score a checkpoint on a split")
    sub.add_parser("inspect", parents=[common], help="write per-sample consistency details")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        # Validate everything the command will need before touching the disk.
        cfg.synthetic_spec()
        cfg.train_config()
        return COMMANDS[args.command](cfg)
    except (ConfigError, InvalidSpecError, InvalidInputError, CompatibilityError, NotReadyError) as exc:
        print(f"tical: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"tical: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, FormatError) as exc:
        print(f"tical: I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

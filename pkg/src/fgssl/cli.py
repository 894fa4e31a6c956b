"""Command-line entry point and the flat key=value run configuration.

One experiment = one output directory: every command writes a resolved
configuration snapshot next to its outputs, so a run can be replayed
from the snapshot alone. Exit codes: 0 success, 1 configuration error,
2 data error, 3 numeric failure, 4 I/O error.
"""

import argparse
import itertools
import json
import os
import sys

from . import evalkit
from .datagen import DataError, DatasetSpec, generate_dataset, load_dataset
from .nets import NumericError
from .perturb import NoiseConfig
from .seeding import derive_seed
from .trainer import ConfigError, TrainConfig, from_flat_dict, load_decoder_checkpoint, \
    pretrain_decoder, save_decoder_checkpoint, to_flat_dict, train

COMMANDS = ("gen-data", "pretrain-decoder", "train", "linear-eval", "retrieval-eval",
            "collapse-report", "export-pairs", "export-attention", "sweep")

# Keys beyond TrainConfig: dataset generation, file wiring, eval knobs.
_EXTRA_DEFAULTS = {
    "num_classes": 8,
    "per_class": 250,
    "subtlety": 0.3,
    "data_seed": 0,
    "manifest": "",
    "checkpoint": "",
    "decoder_init": "",
    "label_fraction": 1.0,
    "probe_epochs": 30,
    "probe_lr": 30.0,
    "export_count": 16,
    "export_split": "test",
}

SNAPSHOT_NAME = "resolved_config.txt"


def default_config() -> dict:
    return {**to_flat_dict(TrainConfig()), **_EXTRA_DEFAULTS}


def _coerce(key: str, raw: str, target):
    raw = raw.strip()
    if isinstance(target, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key!r} expects a boolean, got {raw!r}")
    if isinstance(target, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"key {key!r} expects an integer, got {raw!r}") from exc
    if isinstance(target, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"key {key!r} expects a number, got {raw!r}") from exc
    return raw


def parse_config_text(text: str, defaults: dict | None = None) -> dict:
    """Parse `key = value` lines; '#' starts a comment; unknown keys rejected."""
    cfg = dict(defaults) if defaults is not None else default_config()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in cfg:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        cfg[key] = _coerce(key, raw, cfg[key])
    return cfg


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = default_config()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            cfg = parse_config_text(fh.read(), cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in cfg:
            raise ConfigError(f"unknown override key {key!r}")
        cfg[key] = _coerce(key, raw, cfg[key])
    return cfg


def echo_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, bool):
            rendered = "true" if val else "false"
        elif isinstance(val, float):
            rendered = repr(val)
        else:
            rendered = str(val)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def write_snapshot(cfg: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, SNAPSHOT_NAME), "w") as fh:
        fh.write(echo_config(cfg))


def train_config_from(cfg: dict) -> TrainConfig:
    flat = {k: v for k, v in cfg.items() if k not in _EXTRA_DEFAULTS}
    return from_flat_dict(flat)


def dataset_spec_from(cfg: dict) -> DatasetSpec:
    try:
        return DatasetSpec(num_classes=cfg["num_classes"], per_class=cfg["per_class"],
                           image_size=cfg["image_size"], subtlety=cfg["subtlety"],
                           seed=cfg["data_seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _require(cfg: dict, key: str) -> str:
    if not cfg[key]:
        raise ConfigError(f"command requires config key {key!r}")
    return cfg[key]


def _load_data(cfg: dict):
    return load_dataset(_require(cfg, "manifest"))


def run(command: str, config_path: str | None, overrides: list[str], out: str) -> int:
    """Execute one subcommand; returns a process exit status."""
    try:
        cfg = load_config(config_path, overrides)
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        write_snapshot(cfg, out)
        _dispatch(command, cfg, out)
        return 0
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4


def _dispatch(command: str, cfg: dict, out: str) -> None:
    if command == "gen-data":
        spec = dataset_spec_from(cfg)
        try:
            spec.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        manifest = generate_dataset(spec, out)
        print(f"wrote {manifest}")
        return

    if command == "sweep":
        raise ConfigError("sweep requires --axis; use run_sweep()")

    tcfg = train_config_from(cfg)
    try:
        tcfg.validate()
    except ConfigError:
        raise

    if command == "pretrain-decoder":
        dataset = _load_data(cfg)
        dec_state, history = pretrain_decoder(tcfg, dataset)
        path = os.path.join(out, "decoder.ckpt")
        save_decoder_checkpoint(path, tcfg, dec_state)
        with open(os.path.join(out, "decoder_history.json"), "w") as fh:
            json.dump({"epoch_mse": history}, fh)
        print(f"wrote {path}")
        return

    if command == "train":
        dataset = _load_data(cfg)
        dec_state = None
        if cfg["decoder_init"]:
            dec_state = load_decoder_checkpoint(cfg["decoder_init"], tcfg)
        train(tcfg, dataset, out_dir=out, decoder_state=dec_state)
        print(f"wrote {os.path.join(out, 'ckpt_final.ckpt')}")
        return

    if command == "linear-eval":
        dataset = _load_data(cfg)
        result = evalkit.linear_eval(_require(cfg, "checkpoint"), dataset,
                                     label_fraction=cfg["label_fraction"], seed=cfg["seed"],
                                     epochs=cfg["probe_epochs"], lr=cfg["probe_lr"])
        path = os.path.join(out, "linear_eval.json")
        with open(path, "w") as fh:
            fh.write(result.to_json())
        print(f"top1={result.top1:.2f} -> {path}")
        return

    if command == "retrieval-eval":
        dataset = _load_data(cfg)
        result = evalkit.retrieval_eval(_require(cfg, "checkpoint"), dataset)
        path = os.path.join(out, "retrieval_eval.json")
        with open(path, "w") as fh:
            fh.write(result.to_json())
        print(f"rank1={result.rank1:.2f} rank5={result.rank5:.2f} mAP={result.mAP:.2f} -> {path}")
        return

    if command == "collapse-report":
        dataset = _load_data(cfg)
        path = os.path.join(out, "collapse_report.csv")
        evalkit.collapse_report(_require(cfg, "checkpoint"), dataset, out_csv=path)
        print(f"wrote {path}")
        return

    if command == "export-pairs":
        dataset = _load_data(cfg)
        noise = NoiseConfig(eps_g=cfg["eps_g"], eps_var=cfg["eps_var"],
                            kappa=cfg["kappa"], mode=cfg["noise_mode"])
        paths = evalkit.export_pairs(_require(cfg, "checkpoint"), dataset,
                                     os.path.join(out, "pairs"), noise=noise,
                                     count=cfg["export_count"], split=cfg["export_split"],
                                     seed=cfg["seed"])
        print(f"wrote {len(paths)} pair grids")
        return

    if command == "export-attention":
        dataset = _load_data(cfg)
        paths = evalkit.export_attention(_require(cfg, "checkpoint"), dataset,
                                         os.path.join(out, "attention"),
                                         count=cfg["export_count"], split=cfg["export_split"],
                                         seed=cfg["seed"])
        print(f"wrote {len(paths)} attention grids")
        return

    raise ConfigError(f"unhandled command {command!r}")


def parse_axes(axis_args: list[str], cfg: dict) -> list[tuple[str, list]]:
    axes = []
    for item in axis_args:
        if "=" not in item:
            raise ConfigError(f"axis must be key=v1,v2,..., got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in cfg:
            raise ConfigError(f"unknown sweep key {key!r}")
        if isinstance(cfg[key], str) and key not in ("noise_mode",):
            raise ConfigError(f"sweep axes must be scalar config keys, got {key!r}")
        values = [_coerce(key, v, cfg[key]) for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"axis {key!r} has no values")
        axes.append((key, values))
    return axes


def run_sweep(config_path: str | None, overrides: list[str], axis_args: list[str],
              out: str) -> int:
    """Cartesian sweep: each cell runs pretrain (if needed), train, and evals."""
    try:
        base = load_config(config_path, overrides)
        axes = parse_axes(axis_args, base)
        if not axes:
            raise ConfigError("sweep needs at least one --axis")
        write_snapshot(base, out)
        master_seed = base["seed"]
        cells = []
        for index, combo in enumerate(itertools.product(*[vals for _, vals in axes])):
            cell = dict(base)
            label_parts = []
            for (key, _), value in zip(axes, combo):
                cell[key] = value
                label_parts.append(f"{key}={value}")
            cell["seed"] = derive_seed(master_seed, "sweep_cell", index)
            label = "_".join(label_parts)
            cell_dir = os.path.join(out, label.replace("/", "-"))
            summary = _run_cell(cell, cell_dir)
            summary["cell"] = label
            cells.append(summary)
            print(f"cell {label}: top1={summary['top1']:.2f} rank1={summary['rank1']:.2f}")
        with open(os.path.join(out, "sweep_summary.json"), "w") as fh:
            json.dump({"cells": cells}, fh, indent=2)
        return 0
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4


def _run_cell(cell_cfg: dict, cell_dir: str) -> dict:
    write_snapshot(cell_cfg, cell_dir)
    tcfg = train_config_from(cell_cfg)
    tcfg.validate()
    dataset = load_dataset(_require(cell_cfg, "manifest"))
    dec_state = None
    if tcfg.weights.alpha > 0 or tcfg.weights.nu > 0:
        if cell_cfg["decoder_init"]:
            dec_state = load_decoder_checkpoint(cell_cfg["decoder_init"], tcfg)
        else:
            dec_state, _ = pretrain_decoder(tcfg, dataset)
    train(tcfg, dataset, out_dir=cell_dir, decoder_state=dec_state)
    final = os.path.join(cell_dir, "ckpt_final.ckpt")
    lin = evalkit.linear_eval(final, dataset, label_fraction=cell_cfg["label_fraction"],
                              seed=cell_cfg["seed"], epochs=cell_cfg["probe_epochs"],
                              lr=cell_cfg["probe_lr"])
    ret = evalkit.retrieval_eval(final, dataset)
    summary = {"top1": lin.top1, "rank1": ret.rank1, "rank5": ret.rank5, "mAP": ret.mAP,
               "seed": cell_cfg["seed"], "dir": cell_dir}
    with open(os.path.join(cell_dir, "cell_summary.json"), "w") as fh:
        json.dump(summary, fh)
    return summary


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgssl", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="path to key=value config file")
    parser.add_argument("--out", required=True, help="output directory for this run")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")
    parser.add_argument("--axis", dest="axes", action="append", default=[],
                        metavar="KEY=V1,V2", help="sweep axis (sweep command only)")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    if args.command == "sweep":
        return run_sweep(args.config, args.overrides, args.axes, args.out)
    return run(args.command, args.config, args.overrides, args.out)


if __name__ == "__main__":
    sys.exit(main())

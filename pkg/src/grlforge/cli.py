"""Command-line entry point: ``grlforge {synth,train,eval,gradcheck,reproduce-toy}``.

Settings are resolved in three layers, later ones winning: built-in
defaults, then the JSON file given with ``--config``, then explicit flags.
The config file must carry ``"schema": 1``; its optional sections are
``synth``, ``train`` and ``grl`` plus top-level ``backbone``, ``source``,
``target``, ``run_id`` and ``out``.

Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any

from . import datasets_io as dio
from . import evaluation as ev
from . import experiment as ex
from .forgery_synth import PlacementError, SynthConfig, SynthesisError
from .gradcheck import run_suite
from .grl_dann import PRESETS, CheckpointError, DivergenceError, GrlConfig
from .nn_core import ConfigError, TrainConfig

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4
U64_MAX = 2**64 - 1


class UsageError(Exception):
    """argparse failure turned into exit code 2 instead of SystemExit."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64 - 1]; got {text}")
    return v


def load_config(path) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported or missing schema {data.get('schema')!r}; expected {SCHEMA_VERSION}")
    return data


def _section(cfg: dict, name: str) -> dict[str, Any]:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(sec)


def _pick(args, cfg: dict, name: str, default=None):
    """Flag value if given, else config value, else default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _build(factory, values: dict, what: str):
    try:
        return factory(values) if not isinstance(factory, type) else factory(**values)
    except TypeError as exc:
        raise ConfigError(f"bad {what} settings: {exc}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grlforge", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a forgery corpus")
    _common(p)
    p.add_argument("--size", type=int)
    p.add_argument("--forged-fraction", type=float, dest="forged_fraction")
    p.add_argument("--domain", choices=["source", "target"])

    p = sub.add_parser("train", help="train a model on a source and a target manifest")
    _common(p)
    p.add_argument("--source", help="labelled source manifest")
    p.add_argument("--target", help="target manifest (labels ignored)")
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--grl-mode", choices=["constant", "annealed"], dest="grl_mode")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--backbone", choices=sorted(PRESETS))
    p.add_argument("--val-fraction", type=float, dest="val_fraction")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labelled manifest")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", help="split file written by train")
    p.add_argument("--subset", choices=["train", "test", "all"], default="test")
    p.add_argument("--run-id", dest="run_id", default="eval")
    p.add_argument("--lambda", type=float, dest="lam")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--inject-fault", dest="inject_fault", help=argparse.SUPPRESS)

    p = sub.add_parser("reproduce-toy", help="source-only vs adversarial transfer experiment")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--backbone", choices=sorted(PRESETS))
    p.add_argument("--seeds", type=int, help="number of seeds (0..n-1)")
    p.add_argument("--lambda", type=float, dest="lam", help="use a constant lambda for the adversarial arm")
    p.add_argument("--grl-mode", choices=["constant", "annealed"], dest="grl_mode")
    return parser


def _err(msg: str) -> None:
    print(f"grlforge: error: {msg}", file=sys.stderr)


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    values = _section(cfg, "synth")
    for name in ("seed", "size", "forged_fraction", "domain"):
        if getattr(args, name) is not None:
            values[name] = getattr(args, name)
    out = _pick(args, cfg, "out")
    if out is None:
        raise ConfigError("synth needs --out")
    config = _build(SynthConfig.from_dict, values, "synth")
    manifest = ex.synth_corpus(config, out)
    labels = [e["label"] for e in manifest.entries]
    modes: dict[str, int] = {}
    for e in manifest.entries:
        modes[e["mode"]] = modes.get(e["mode"], 0) + 1
    mode_txt = ", ".join(f"{k}={v}" for k, v in sorted(modes.items()))
    print(f"wrote {len(labels)} images to {out}: {sum(labels)} forged / {len(labels) - sum(labels)} authentic ({mode_txt})")
    return EXIT_OK


def _train_settings(args, cfg: dict) -> ex.RunSettings:
    tvals = _section(cfg, "train")
    tvals.setdefault("epochs", 20)
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("lr", "lr"), ("batch_size", "batch_size")):
        if getattr(args, flag) is not None:
            tvals[key] = getattr(args, flag)
    gvals = _section(cfg, "grl")
    if args.lam is not None:
        gvals["lambda0"] = args.lam
    if args.grl_mode is not None:
        gvals["mode"] = args.grl_mode
    extra = {}
    val = _pick(args, cfg, "val_fraction")
    if val is not None:
        extra["val_fraction"] = val
    return ex.RunSettings(
        train=_build(TrainConfig, tvals, "train"),
        grl=_build(GrlConfig, gvals, "grl"),
        backbone=_pick(args, cfg, "backbone", "small-cnn"),
        **extra,
    )


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    settings = _train_settings(args, cfg)
    paths = {k: _pick(args, cfg, k) for k in ("source", "target", "out", "run_id")}
    missing = [k for k, v in paths.items() if v is None]
    if missing:
        raise ConfigError("train needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
    if settings.backbone not in PRESETS:
        raise ConfigError(f"unknown backbone {settings.backbone!r}")
    source = dio.load_manifest(paths["source"])
    target = dio.load_manifest(paths["target"])
    result = ex.train_run(source, target, Path(paths["out"]) / paths["run_id"], settings, log=print)
    L = result.losses
    if L is not None:
        print(f"final losses: l_source={L.l_source!r} l_domain={L.l_domain!r} l_total={L.l_total!r}")
    print(f"source validation f1={result.final.f1!r} accuracy={result.final.accuracy!r}")
    print(f"run written to {result.run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    manifest = dio.load_manifest(args.manifest)
    report = ex.eval_run(args.checkpoint, manifest, args.split, args.subset)
    out = _pick(args, cfg, "out")
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        ev.append_csv(Path(out) / ex.METRICS_NAME, [report.row(args.run_id, "", "" if args.lam is None else args.lam)])
    print(f"f1={report.f1!r} accuracy={report.accuracy!r} precision={report.precision!r} recall={report.recall!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    result = run_suite(trials=args.trials, seed=seed, fault=args.inject_fault)
    for name, err in result.errors.items():
        status = "ok" if err < result.tolerance else "FAIL"
        print(f"{name:28s} max_rel_err={err:.3e} {status}")
    print(f"{len(result.errors)} components checked in {result.seconds:.1f}s")
    if not result.passed:
        for name, err in result.failures.items():
            _err(f"gradient check failed for {name}: relative error {err:.3e} >= {result.tolerance:g}")
        return EXIT_CHECK
    return EXIT_OK


def cmd_reproduce_toy(args) -> int:
    cfg = load_config(args.config)
    out = _pick(args, cfg, "out")
    if out is None:
        raise ConfigError("reproduce-toy needs --out")
    n_seeds = int(_pick(args, cfg, "seeds", len(ex.TOY_SEEDS)))
    train = _section(cfg, "train")
    if args.epochs is not None:
        train["epochs"] = args.epochs
    gvals = {**asdict(ex.TOY_DANN), **_section(cfg, "grl")}
    if args.lam is not None:
        gvals.update(mode="constant", lambda0=args.lam)
    if args.grl_mode is not None:
        gvals["mode"] = args.grl_mode
    summary = ex.reproduce_toy(
        out,
        seeds=tuple(range(n_seeds)),
        dann=_build(GrlConfig, gvals, "grl"),
        train=train,
        backbone=_pick(args, cfg, "backbone", "small-cnn"),
        log=print,
    )
    for arm, med in summary.medians.items():
        print(f"{arm} medians: " + " ".join(f"{k}={v:.4f}" for k, v in med.items()))
    checks = summary.checks()
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"total {summary.seconds:.0f}s; comparison written to {Path(out) / 'comparison.csv'}")
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "reproduce-toy": cmd_reproduce_toy,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        _err(f"training diverged: {exc}")
        return EXIT_DIVERGED
    except (CheckpointError, dio.PnmError, dio.DatasetError, OSError) as exc:
        _err(str(exc))
        return EXIT_IO
    except (ConfigError, dio.ManifestError, PlacementError, SynthesisError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

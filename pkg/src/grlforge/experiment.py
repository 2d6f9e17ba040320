"""Training, evaluation and the toy transfer experiment as plain functions.

The command-line layer in :mod:`grlforge.cli` only parses arguments and maps
exceptions to exit codes; everything that touches data lives here.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import datasets_io as dio
from . import evaluation as ev
from .forgery_synth import SynthConfig, mix, synthesize_dataset
from .grl_dann import GrlConfig, build_preset, fit, lambda_at, load_checkpoint, save_checkpoint
from .nn_core import ConfigError, TrainConfig

CHECKPOINT_NAME = "checkpoint.grlf"
SPLIT_NAME = "split.json"
METRICS_NAME = "metrics.csv"
TARGET_HOLDOUT_STREAM = 0xD0A1

# Toy transfer setting: 32x32 copy-move corpora with a blur and brightness shift.
TOY_SYNTH = {
    "size": 1000,
    "height": 32,
    "width": 32,
    "channels": 3,
    "forged_fraction": 0.5,
    "copy_move_prob": 1.0,
    "rotation_range": [-45.0, 45.0],
    "scale_range": [0.8, 1.25],
    "region_frac": [0.3, 0.5],
}
TOY_SOURCE = {**TOY_SYNTH, "blur_range": [0.0, 0.5], "brightness_offset": 0.0, "seed": 1, "domain": "source"}
TOY_TARGET = {**TOY_SYNTH, "blur_range": [1.0, 2.0], "brightness_offset": 0.1, "seed": 2, "domain": "target"}
TOY_SEEDS = (0, 1, 2, 3, 4)
# plain SGD: momentum makes the simultaneous min-max updates spiral outward;
# the decaying rate damps the end-of-training oscillation in both arms
TOY_TRAIN = {"lr": 0.2, "momentum": 0.0, "batch_size": 32, "epochs": 20, "lr_schedule": "annealed"}
# lambda ramps from 0 towards 1; a cold start at lambda=1 collapses training
TOY_DANN = GrlConfig("annealed", 1.0, 10.0)
TOY_BASELINE = GrlConfig("constant", 0.0)
COMPARISON_FIELDS = [
    "run_id", "arm", "seed", "grl_mode", "final_lambda",
    "source_val_f1", "target_f1", "target_accuracy", "domain_accuracy", "seconds",
]


@dataclass
class RunSettings:
    """Everything ``train`` needs besides the two manifests."""

    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    grl: GrlConfig = field(default_factory=GrlConfig)
    backbone: str = "small-cnn"
    val_fraction: float = 0.2
    target_holdout: float = 0.2

    def __post_init__(self):
        for name in ("val_fraction", "target_holdout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1); got {v}")


@dataclass
class TrainResult:
    run_dir: Path
    final: ev.MetricsReport
    losses: Any
    records: list = field(default_factory=list)


def synth_corpus(config: SynthConfig, out_dir) -> dio.Manifest:
    """Generate a corpus and write it under ``out_dir`` (created if absent,
    its parent must exist)."""
    out = Path(out_dir)
    if not out.parent.is_dir():
        raise FileNotFoundError(f"parent directory of output {out} does not exist")
    out.mkdir(exist_ok=True)
    samples, entries = synthesize_dataset(config)
    return dio.write_corpus(samples, entries, out)


def _target_holdout(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random (unstratified, label-free) split of the target domain."""
    n_hold = int(np.floor(n * fraction + 0.5))
    perm = np.random.default_rng(mix(seed, TARGET_HOLDOUT_STREAM)).permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train_run(
    source: dio.Manifest,
    target: dio.Manifest,
    run_dir,
    settings: RunSettings,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train one model and write checkpoint, split and per-epoch metrics to ``run_dir``.

    The source manifest is split into train/validation; per-channel
    statistics come from the source training part only. The target domain
    contributes images (never labels); a label-free holdout of it is kept
    aside for the domain-accuracy diagnostic.
    """
    run_dir = Path(run_dir)
    if run_dir.exists():
        raise ConfigError(f"run directory {run_dir} already exists; choose a new run id")
    if len(source) == 0 or len(target) == 0:
        raise ConfigError("source and target manifests must both be non-empty")
    if not source.has_labels():
        raise ConfigError("every source entry needs a label")
    cfg = settings.train
    split = dio.make_split(source, settings.val_fraction, cfg.seed)
    if len(split.train) == 0 or len(split.test) == 0:
        raise ConfigError("source split left an empty train or validation set")
    stats = dio.norm_stats(dio.load_images(source, split.train))
    split.stats = stats
    src = dio.source_training_view(source, split.train, stats)
    val = dio.evaluation_view(source, split.test, stats)
    t_train, t_hold = _target_holdout(len(target), settings.target_holdout, cfg.seed)
    tgt = dio.target_training_view(target, t_train, stats)
    tgt_hold = dio.target_training_view(target, t_hold, stats) if len(t_hold) else tgt

    model = build_preset(settings.backbone, src.images.shape[1:], cfg.seed, settings.grl)
    model.meta.update(
        norm={"mean": stats.mean, "std": stats.std},
        train=asdict(cfg),
        val_fraction=settings.val_fraction,
        target_holdout=settings.target_holdout,
    )
    run_dir.mkdir(parents=True)
    dio.save_split(split, run_dir / SPLIT_NAME)
    metrics_path = run_dir / METRICS_NAME
    run_id = run_dir.name
    reports: list[ev.MetricsReport] = []

    def on_epoch(rec):
        rep = ev.evaluate(model, val.images, val.labels, domains=(val.images, tgt_hold.images))
        reports.append(rep)
        ev.append_csv(metrics_path, [rep.row(run_id, rec.epoch, rec.lam)])
        if log is not None:
            L = rec.losses
            log(
                f"epoch {rec.epoch}: lambda={rec.lam:.4g} l_source={L.l_source:.4f} "
                f"l_domain={L.l_domain:.4f} val_f1={rep.f1:.4f} domain_acc={rep.domain_accuracy:.4f}"
            )

    report = fit(model, src.images, src.labels, tgt.images, cfg, settings.grl, on_epoch=on_epoch)
    save_checkpoint(model, run_dir / CHECKPOINT_NAME)
    final = reports[-1] if reports else ev.evaluate(model, val.images, val.labels)
    losses = report.epochs[-1].losses if report.epochs else None
    return TrainResult(run_dir, final, losses, report.epochs)


def eval_run(checkpoint, manifest: dio.Manifest, split_path=None, subset: str = "test") -> ev.MetricsReport:
    """Evaluate a checkpoint on a labelled manifest, optionally restricted to
    one side of a saved split. Normalisation comes from the checkpoint."""
    model = load_checkpoint(checkpoint)
    if len(manifest) == 0:
        raise ConfigError("evaluation manifest is empty")
    if subset not in ("train", "test", "all"):
        raise ConfigError(f"subset must be train, test or all; got {subset!r}")
    indices = np.arange(len(manifest))
    if split_path is not None and subset != "all":
        split = dio.load_split(split_path)
        indices = getattr(split, subset)
        if len(indices) and indices.max() >= len(manifest):
            raise ConfigError("split indices exceed the manifest length")
    norm = model.meta.get("norm")
    stats = None if norm is None else dio.NormStats(norm["mean"], norm["std"])
    view = dio.evaluation_view(manifest, indices, stats)
    if len(view) == 0:
        raise ConfigError("evaluation set is empty")
    return ev.evaluate(model, view.images, view.labels)


def median(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


@dataclass
class ToySummary:
    rows: list[dict[str, Any]]
    medians: dict[str, dict[str, float]]
    seconds: float

    @property
    def f1_gain(self) -> float:
        return self.medians["dann"]["target_f1"] - self.medians["source_only"]["target_f1"]

    def checks(self) -> dict[str, bool]:
        base, dann = self.medians["source_only"], self.medians["dann"]
        return {
            "target_f1_gain>=0.03": self.f1_gain >= 0.03,
            "source_val_f1>=0.85": base["source_val_f1"] >= 0.85 and dann["source_val_f1"] >= 0.85,
            "domain_accuracy_lower": dann["domain_accuracy"] < base["domain_accuracy"],
        }


def _toy_corpora(out: Path) -> dict[str, dio.Manifest]:
    corpora = {}
    for name, cfg in (("source", TOY_SOURCE), ("target", TOY_TARGET)):
        manifest_path = out / name / "manifest.jsonl"
        if manifest_path.exists():
            corpora[name] = dio.load_manifest(manifest_path)
        else:
            corpora[name] = synth_corpus(SynthConfig.from_dict(cfg), out / name)
    return corpora


def reproduce_toy(
    out_dir,
    seeds=TOY_SEEDS,
    dann: GrlConfig = TOY_DANN,
    train: dict[str, Any] | None = None,
    backbone: str = "small-cnn",
    log: Callable[[str], None] | None = None,
) -> ToySummary:
    """Synthesise both domains, train a source-only and an adversarial model
    per seed, evaluate both on the whole target domain and write
    ``comparison.csv`` and ``summary.json``.

    Finished runs found under ``out_dir/runs`` are reused, so an interrupted
    experiment can be resumed.
    """
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train = {**TOY_TRAIN, **(train or {})}
    corpora = _toy_corpora(out)
    target_all = dio.evaluation_view(corpora["target"], range(len(corpora["target"])), None)
    rows = []
    for arm, grl in (("source_only", TOY_BASELINE), ("dann", dann)):
        for seed in seeds:
            run_id = f"{arm}-seed{seed}"
            run_dir = out / "runs" / run_id
            t1 = time.perf_counter()
            if (run_dir / CHECKPOINT_NAME).exists():
                last = ev.read_csv(run_dir / METRICS_NAME)[-1]
                src_f1, dacc = float(last["f1"]), float(last["domain_accuracy"])
            else:
                settings = RunSettings(TrainConfig(**train, seed=seed), grl, backbone)
                result = train_run(corpora["source"], corpora["target"], run_dir, settings)
                src_f1, dacc = result.final.f1, result.final.domain_accuracy
            model = load_checkpoint(run_dir / CHECKPOINT_NAME)
            stats = dio.NormStats(model.meta["norm"]["mean"], model.meta["norm"]["std"])
            tgt = ev.evaluate(model, stats.apply(target_all.images), target_all.labels)
            epochs = int(train["epochs"])
            row = {
                "run_id": run_id, "arm": arm, "seed": seed, "grl_mode": grl.mode,
                "final_lambda": lambda_at(grl, (epochs - 1) / epochs),
                "source_val_f1": src_f1, "target_f1": tgt.f1, "target_accuracy": tgt.accuracy,
                "domain_accuracy": dacc, "seconds": round(time.perf_counter() - t1, 1),
            }
            rows.append(row)
            if log is not None:
                log(f"{run_id}: source_val_f1={src_f1:.4f} target_f1={tgt.f1:.4f} domain_acc={dacc:.4f} ({row['seconds']}s)")
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARISON_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    medians = {
        arm: {k: median([r[k] for r in rows if r["arm"] == arm]) for k in ("source_val_f1", "target_f1", "domain_accuracy")}
        for arm in ("source_only", "dann")
    }
    summary = ToySummary(rows, medians, time.perf_counter() - t0)
    payload = {"medians": medians, "checks": summary.checks(), "seconds": summary.seconds}
    (out / "summary.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return summary

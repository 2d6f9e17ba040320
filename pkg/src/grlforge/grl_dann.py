"""Two-head domain-adversarial network built on :mod:`grlforge.nn_core`.

A shared feature extractor feeds a class head directly and a domain head
through a gradient-reversal layer (GRL). The GRL is the identity going
forward and multiplies the gradient by ``-lambda`` going backward, so the
feature extractor descends ``l_source - lambda * l_domain`` while the domain
head descends ``l_domain``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from .nn_core import (
    ConfigError,
    LayerSpec,
    Network,
    ShapeError,
    TrainConfig,
    conv2d,
    linear,
    lr_at,
    maxpool,
    RELU,
    FLATTEN,
    sgd_step,
    softmax_cross_entropy,
)

SOURCE, TARGET = 0, 1
NUM_CLASSES = 2
CHECKPOINT_MAGIC = b"GRLF1"
# two-class cross-entropy starts near log 2; a loss this large means the
# weights have blown up even if the float has not overflowed yet
LOSS_LIMIT = 1e10


class DivergenceError(ArithmeticError):
    """Raised when a training loss or parameter becomes non-finite."""


class CheckpointError(IOError):
    """Raised for unreadable, truncated or foreign checkpoint files."""


# ---------------------------------------------------------------------------
# Gradient reversal
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrlConfig:
    """Reversal strength: a constant ``lambda0`` or the annealed ramp
    ``2 / (1 + exp(-gamma * p)) - 1`` over training progress ``p``."""

    mode: str = "constant"
    lambda0: float = 1.0
    gamma: float = 10.0

    def __post_init__(self):
        if self.mode not in ("constant", "annealed"):
            raise ConfigError(f"GRL mode must be 'constant' or 'annealed'; got {self.mode!r}")
        if not self.lambda0 >= 0:
            raise ConfigError(f"lambda0 must be >= 0; got {self.lambda0}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0; got {self.gamma}")


def lambda_at(config: GrlConfig, progress: float) -> float:
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"training progress must lie in [0, 1]; got {progress}")
    if config.mode == "constant":
        return float(config.lambda0)
    return 2.0 / (1.0 + math.exp(-config.gamma * progress)) - 1.0


def grl_forward(x: np.ndarray) -> np.ndarray:
    return np.array(x, dtype=np.float64, copy=True)


def grl_backward(grad_out: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0; got {lam}")
    return -lam * np.asarray(grad_out, dtype=np.float64)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

# Backbone presets: sizes only; specs are derived from the input shape.
PRESETS: dict[str, dict[str, Any]] = {
    "small-cnn": {"type": "cnn", "channels": [8, 16], "kernel": 3, "pools": [2, 8], "feature_width": 64, "head_hidden": 32},
    "mlp": {"type": "mlp", "hidden": [64], "feature_width": 32, "head_hidden": 16},
}


def preset_specs(preset: str | dict[str, Any], input_shape: Sequence[int]):
    """Expand a backbone preset into (feature, source-head, domain-head) layer specs."""
    if isinstance(preset, str) and preset not in PRESETS:
        raise ConfigError(f"unknown backbone preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset] if isinstance(preset, str) else preset
    c, h, w = (int(s) for s in input_shape)
    feats: list[LayerSpec] = []
    if cfg["type"] == "cnn":
        k = cfg["kernel"]
        for cout, pool in zip(cfg["channels"], cfg["pools"]):
            feats += [conv2d(c, cout, k, padding=k // 2), RELU, maxpool(pool)]
            c, h, w = cout, h // pool, w // pool
        feats += [FLATTEN, linear(c * h * w, cfg["feature_width"]), RELU]
    elif cfg["type"] == "mlp":
        width = c * h * w
        feats.append(FLATTEN)
        for hid in cfg["hidden"]:
            feats += [linear(width, hid), RELU]
            width = hid
        feats += [linear(width, cfg["feature_width"]), RELU]
    else:
        raise ConfigError(f"unknown backbone type {cfg['type']!r}")
    fw, hh = cfg["feature_width"], cfg.get("head_hidden", 0)
    source = [linear(fw, NUM_CLASSES)]
    domain = [linear(fw, hh), RELU, linear(hh, 2)] if hh else [linear(fw, 2)]
    return feats, source, domain


@dataclass
class DannModel:
    feature_extractor: Network
    source_head: Network
    domain_head: Network
    grl: GrlConfig = field(default_factory=GrlConfig)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        fshape = self.feature_extractor.output_shape
        if self.source_head.input_shape != fshape or self.domain_head.input_shape != fshape:
            raise ShapeError(
                f"feature output {fshape} must match head inputs "
                f"{self.source_head.input_shape} / {self.domain_head.input_shape}"
            )
        if self.source_head.output_shape != (NUM_CLASSES,) or self.domain_head.output_shape != (2,):
            raise ShapeError("source and domain heads must both output 2 logits")

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.feature_extractor.input_shape

    @property
    def param_sets(self):
        return [self.feature_extractor.params, self.source_head.params, self.domain_head.params]

    def zero_grad(self) -> None:
        for ps in self.param_sets:
            ps.zero_grad()


def build_model(
    feature_specs: Sequence[LayerSpec],
    source_specs: Sequence[LayerSpec],
    domain_specs: Sequence[LayerSpec],
    input_shape: Sequence[int],
    seed: int = 0,
    grl: GrlConfig | None = None,
) -> DannModel:
    """Initialise theta_f, theta_s, theta_d from one seeded generator, in that order."""
    rng = np.random.default_rng(seed)
    fe = Network(feature_specs, input_shape, rng)
    sh = Network(source_specs, fe.output_shape, rng)
    dh = Network(domain_specs, fe.output_shape, rng)
    return DannModel(fe, sh, dh, grl or GrlConfig())


def build_preset(preset: str, input_shape: Sequence[int], seed: int = 0, grl: GrlConfig | None = None) -> DannModel:
    model = build_model(*preset_specs(preset, input_shape), input_shape, seed, grl)
    model.meta["backbone"] = preset
    return model


# ---------------------------------------------------------------------------
# Forward, loss, backward
# ---------------------------------------------------------------------------

@dataclass
class DomainBatch:
    """Labelled source images plus unlabelled target images.

    Domain labels are implicit: 0 for the source rows, 1 for the target rows.
    """

    source_images: np.ndarray
    source_class_labels: np.ndarray
    target_images: np.ndarray

    def __post_init__(self):
        self.source_images = np.asarray(self.source_images, dtype=np.float64)
        self.target_images = np.asarray(self.target_images, dtype=np.float64)
        self.source_class_labels = np.asarray(self.source_class_labels, dtype=np.int64)
        if len(self.source_images) < 1:
            raise ValueError("a domain batch needs at least one source image")
        if self.source_class_labels.shape != (len(self.source_images),):
            raise ShapeError("one class label per source image is required")

    @property
    def domain_labels(self) -> np.ndarray:
        bs, bt = len(self.source_images), len(self.target_images)
        return np.concatenate([np.full(bs, SOURCE, np.int64), np.full(bt, TARGET, np.int64)])


@dataclass(frozen=True)
class LossBreakdown:
    l_source: float
    l_domain: float
    l_total: float


def dann_forward(model: DannModel, batch: DomainBatch):
    """Returns ``(source_logits, domain_logits, cache)``.

    Source and target images go through the feature extractor in separate
    passes, so each image is featurised once and the source pass is exactly
    what a source-only classifier would compute.
    """
    fe = model.feature_extractor
    f_src, c_src = fe.forward(batch.source_images)
    if len(batch.target_images):
        f_tgt, c_tgt = fe.forward(batch.target_images)
    else:
        f_tgt, c_tgt = np.zeros((0,) + fe.output_shape), None
    src_logits, c_sh = model.source_head.forward(f_src)
    reversed_feats = grl_forward(np.concatenate([f_src, f_tgt]))
    dom_logits, c_dh = model.domain_head.forward(reversed_feats)
    cache = {"src": c_src, "tgt": c_tgt, "sh": c_sh, "dh": c_dh, "bs": len(f_src)}
    return src_logits, dom_logits, cache


def dann_loss(source_logits, source_labels, domain_logits) -> LossBreakdown:
    """Unweighted sum of class and domain cross-entropies; rows of
    ``domain_logits`` are source samples first, then target samples."""
    bs = len(source_logits)
    dom_labels = np.concatenate([np.full(bs, SOURCE), np.full(len(domain_logits) - bs, TARGET)]).astype(np.int64)
    l_src, _ = softmax_cross_entropy(source_logits, source_labels)
    l_dom, _ = softmax_cross_entropy(domain_logits, dom_labels)
    return LossBreakdown(l_src, l_dom, l_src + l_dom)


def dann_backward(model: DannModel, batch: DomainBatch, lam: float):
    """Forward + backward; accumulates gradients into all three parameter sets.

    Returns ``(LossBreakdown, source_logits, domain_logits)``.
    """
    src_logits, dom_logits, cache = dann_forward(model, batch)
    l_src, g_src = softmax_cross_entropy(src_logits, batch.source_class_labels)
    l_dom, g_dom = softmax_cross_entropy(dom_logits, batch.domain_labels)
    losses = LossBreakdown(l_src, l_dom, l_src + l_dom)
    if not (math.isfinite(l_src) and math.isfinite(l_dom)):
        raise DivergenceError(f"non-finite loss: source={l_src}, domain={l_dom}")
    if max(l_src, l_dom) > LOSS_LIMIT:
        raise DivergenceError(f"loss exceeded {LOSS_LIMIT:g}: source={l_src}, domain={l_dom}")

    g_feat_src = model.source_head.backward(g_src, cache["sh"])
    g_feat_dom = grl_backward(model.domain_head.backward(g_dom, cache["dh"]), lam)
    bs = cache["bs"]
    model.feature_extractor.backward(g_feat_src + g_feat_dom[:bs], cache["src"])
    if cache["tgt"] is not None:
        model.feature_extractor.backward(g_feat_dom[bs:], cache["tgt"])
    return losses, src_logits, dom_logits


def train_step(model: DannModel, batch: DomainBatch, config: TrainConfig, lam: float) -> LossBreakdown:
    losses, _, _ = dann_backward(model, batch, lam)
    sgd_step(model.param_sets, config)
    _check_finite(model)
    return losses


def _check_finite(model: DannModel) -> None:
    for ps in model.param_sets:
        for name, p in ps.params.items():
            if not np.isfinite(p).all():
                raise DivergenceError(f"parameter {name} became non-finite")


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    source_accuracy: float
    domain_accuracy: float
    lam: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def to_dicts(self) -> list[dict[str, Any]]:
        return [asdict(e) for e in self.epochs]


def epoch_batches(n_source: int, n_target: int, batch_size: int, rng: np.random.Generator):
    """Index pairs for one epoch.

    Both sets are shuffled; the larger one is walked once in ``batch_size``
    chunks (last chunk short) and the smaller one cycles, reshuffled on every
    pass, supplying the same number of rows per batch.
    """
    perm_s = rng.permutation(n_source)
    perm_t = rng.permutation(n_target)
    n = max(n_source, n_target)

    def cycled(perm, size):
        parts, total = [perm], len(perm)
        while total < n:
            parts.append(rng.permutation(size))
            total += size
        return np.concatenate(parts)[:n]

    if n_source >= n_target:
        perm_t = cycled(perm_t, n_target)
    else:
        perm_s = cycled(perm_s, n_source)
    for start in range(0, n, batch_size):
        yield perm_s[start:start + batch_size], perm_t[start:start + batch_size]


def fit(
    model: DannModel,
    source_images: np.ndarray,
    source_labels: np.ndarray,
    target_images: np.ndarray,
    config: TrainConfig,
    grl_config: GrlConfig | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainReport:
    """Adversarial training; the target set is images only, no class labels.

    ``on_epoch`` is called after every epoch with its record.
    """
    grl_config = grl_config or model.grl
    if len(source_images) == 0 or len(target_images) == 0:
        raise ConfigError("fit needs non-empty source and target datasets")
    if len(source_labels) != len(source_images):
        raise ShapeError("source labels and images differ in length")
    source_images = np.asarray(source_images, dtype=np.float64)
    target_images = np.asarray(target_images, dtype=np.float64)
    source_labels = np.asarray(source_labels, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    for epoch in range(config.epochs):
        lam = lambda_at(grl_config, epoch / config.epochs)
        step_cfg = replace(config, lr=lr_at(config, epoch / config.epochs), lr_schedule="constant")
        sums = np.zeros(2)
        n_batches = 0
        src_hits = src_seen = dom_hits = dom_seen = 0
        for si, ti in epoch_batches(len(source_images), len(target_images), config.batch_size, rng):
            batch = DomainBatch(source_images[si], source_labels[si], target_images[ti])
            losses, src_logits, dom_logits = dann_backward(model, batch, lam)
            sgd_step(model.param_sets, step_cfg)
            _check_finite(model)
            assert losses.l_total == losses.l_source + losses.l_domain
            sums += (losses.l_source, losses.l_domain)
            n_batches += 1
            src_hits += int((src_logits.argmax(1) == batch.source_class_labels).sum())
            src_seen += len(si)
            dom_hits += int((dom_logits.argmax(1) == batch.domain_labels).sum())
            dom_seen += len(dom_logits)
        l_src, l_dom = sums / n_batches
        record = EpochRecord(
            epoch=epoch,
            losses=LossBreakdown(float(l_src), float(l_dom), float(l_src) + float(l_dom)),
            source_accuracy=src_hits / src_seen,
            domain_accuracy=dom_hits / dom_seen,
            lam=lam,
        )
        report.epochs.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return report


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def class_logits(model: DannModel, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    out = [model.source_head(model.feature_extractor(images[i:i + chunk])) for i in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))


def domain_logits(model: DannModel, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    out = [model.domain_head(model.feature_extractor(images[i:i + chunk])) for i in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros((0, 2))


def predict(model: DannModel, images: np.ndarray) -> np.ndarray:
    """Class per image (1 = forged); ties resolve to the lower index."""
    return class_logits(model, images).argmax(axis=1)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_U64 = struct.Struct("<Q")


def _networks(model: DannModel):
    return [("feature_extractor", model.feature_extractor), ("source_head", model.source_head), ("domain_head", model.domain_head)]


def checkpoint_bytes(model: DannModel) -> bytes:
    """Serialise to the GRLF1 layout.

    ``b"GRLF1"``, u64 header length, UTF-8 JSON header, then for every
    parameter tensor: u64 rank, u64 dims, little-endian float64 data. All
    integers are little-endian.
    """
    names = [f"{net}/{p}" for net, n in _networks(model) for p in n.params.params]
    header = {
        "input_shape": list(model.input_shape),
        "feature_extractor": model.feature_extractor.spec_dicts(),
        "source_head": model.source_head.spec_dicts(),
        "domain_head": model.domain_head.spec_dicts(),
        "grl": asdict(model.grl),
        "meta": model.meta,
        "tensors": names,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _U64.pack(len(hdr)), hdr]
    for _, net in _networks(model):
        for p in net.params.params.values():
            parts.append(_U64.pack(p.ndim))
            parts.extend(_U64.pack(d) for d in p.shape)
            parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: DannModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def _take(buf: bytes, pos: int, n: int, what: str) -> bytes:
    if pos + n > len(buf):
        raise CheckpointError(f"truncated checkpoint: needed {n} bytes for {what} at offset {pos}, file has {len(buf)}")
    return buf[pos:pos + n]


def checkpoint_from_bytes(buf: bytes) -> DannModel:
    if buf[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {buf[:5]!r}; expected {CHECKPOINT_MAGIC!r}")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = _U64.unpack(_take(buf, pos, 8, "header length"))
    pos += 8
    try:
        header = json.loads(_take(buf, pos, hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    pos += hlen
    try:
        specs = {k: [LayerSpec.from_dict(d) for d in header[k]] for k in ("feature_extractor", "source_head", "domain_head")}
        model = build_model(specs["feature_extractor"], specs["source_head"], specs["domain_head"], header["input_shape"], 0, GrlConfig(**header["grl"]))
        model.meta = dict(header["meta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint header: {exc!r}") from exc
    for name, net in _networks(model):
        for pname, p in net.params.params.items():
            (rank,) = _U64.unpack(_take(buf, pos, 8, f"{name}/{pname} rank"))
            pos += 8
            dims = struct.unpack(f"<{rank}Q", _take(buf, pos, 8 * rank, f"{name}/{pname} dims"))
            pos += 8 * rank
            if tuple(dims) != p.shape:
                raise CheckpointError(f"{name}/{pname}: stored shape {dims} != expected {p.shape}")
            raw = _take(buf, pos, 8 * p.size, f"{name}/{pname} data")
            pos += 8 * p.size
            p[...] = np.frombuffer(raw, dtype="<f8").reshape(p.shape)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last tensor")
    return model


def load_checkpoint(path) -> DannModel:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())

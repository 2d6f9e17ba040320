"""Corpus persistence: PPM/PGM codec, JSON-lines manifests, splits and batches.

Images live in memory as float64 arrays of shape (H, W, C) with values in
[0, 1]; on disk they are binary PNM with maxval 255. Writing maps a value
``v`` to ``floor(255 * v + 0.5)`` and reading maps a byte ``b`` to ``b / 255``,
so write(read(f)) reproduces ``f`` byte for byte.

Class labels of the target domain never reach training code:
:func:`target_training_view` returns :class:`UnlabeledImages`, which has no
label field at all.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .forgery_synth import mix

VARIANCE_FLOOR = 1e-8
DOMAINS = ("source", "target")


class PnmError(ValueError):
    """Malformed, truncated or unsupported PPM/PGM data."""


class ManifestError(ValueError):
    """Invalid manifest content; message cites the 1-based line number."""


class DatasetError(IOError):
    """An image referenced by a manifest could not be loaded."""


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------

def _header_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens after the magic,
    skipping ``#`` comments. Returns (tokens, offset of the payload)."""
    tokens, pos, n = [], 2, len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PnmError(f"truncated header at byte offset {pos}")
        tok = data[start:pos]
        if not tok.isdigit():
            raise PnmError(f"non-numeric header field {tok!r} at byte offset {start}")
        tokens.append(int(tok))
    if pos >= n or not data[pos:pos + 1].isspace():
        raise PnmError(f"missing whitespace after header at byte offset {pos}")
    return tokens, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {magic!r} at byte offset 0; expected P5 or P6")
    (width, height, maxval), offset = _header_tokens(data, 3)
    if maxval != 255:
        raise PnmError(f"unsupported maxval {maxval} (only 255) in header ending at byte offset {offset}")
    if width < 1 or height < 1:
        raise PnmError(f"invalid dimensions {width}x{height}")
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    payload = data[offset:offset + size]
    if len(payload) < size:
        raise PnmError(f"truncated payload: expected {size} bytes at byte offset {offset}, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return arr.astype(np.float64) / 255.0


def to_bytes(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_pnm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise ValueError(f"PNM images need 1 or 3 channels; got {c}")
    magic = b"P6" if c == 3 else b"P5"
    raw = img.astype(np.uint8) if img.dtype == np.uint8 else to_bytes(img)
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + raw.tobytes()


def read_image(path) -> np.ndarray:
    """Decode a binary PPM (P6) or PGM (P5) file into (H, W, C) floats."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return decode_pnm(data)
    except PnmError as exc:
        raise PnmError(f"{path}: {exc}") from None


def write_image(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pnm(image))


def write_mask(path, mask: np.ndarray) -> None:
    write_image(path, np.asarray(mask, dtype=np.uint8) * np.uint8(255))


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass
class Manifest:
    """Ordered corpus entries; relative paths resolve against ``root``."""

    entries: list[dict[str, Any]] = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> dict[str, Any]:
        return self.entries[i]

    def resolve(self, i: int) -> Path:
        return self.root / self.entries[i]["path"]

    def labels(self, indices=None) -> np.ndarray:
        idx = range(len(self)) if indices is None else indices
        out = []
        for i in idx:
            lab = self.entries[i].get("label")
            if lab is None:
                raise ManifestError(f"entry {i} ({self.entries[i]['path']}) has no label")
            out.append(lab)
        return np.asarray(out, dtype=np.int64)

    def has_labels(self) -> bool:
        return all(e.get("label") is not None for e in self.entries)

    def validate(self) -> None:
        seen: set[str] = set()
        for n, e in enumerate(self.entries, start=1):
            _check_entry(e, n, seen)


def _check_entry(e: Any, line: int, seen: set[str]) -> None:
    if not isinstance(e, dict):
        raise ManifestError(f"line {line}: expected a JSON object")
    path = e.get("path")
    if not isinstance(path, str) or not path:
        raise ManifestError(f"line {line}: missing or empty 'path'")
    if path in seen:
        raise ManifestError(f"line {line}: duplicate path {path!r}")
    seen.add(path)
    if e.get("label") not in (0, 1, None) or isinstance(e.get("label"), bool):
        raise ManifestError(f"line {line}: invalid label {e.get('label')!r}; expected 0, 1 or absent")
    if e.get("domain", "source") not in DOMAINS:
        raise ManifestError(f"line {line}: invalid domain {e.get('domain')!r}")


def parse_manifest(text: str, root=".") -> Manifest:
    entries: list[dict[str, Any]] = []
    seen: set[str] = set()
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            e = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {n}: bad JSON ({exc.msg})") from None
        _check_entry(e, n, seen)
        entries.append(e)
    return Manifest(entries, Path(root))


def load_manifest(path) -> Manifest:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), path.parent)


def dump_manifest(manifest: Manifest) -> str:
    return "".join(json.dumps(e) + "\n" for e in manifest.entries)


def save_manifest(manifest: Manifest, path) -> None:
    manifest.validate()
    Path(path).write_text(dump_manifest(manifest), encoding="utf-8")


def write_corpus(samples, entries, out_dir) -> Manifest:
    """Write images, masks and ``manifest.jsonl`` produced by
    :func:`grlforge.forgery_synth.synthesize_dataset`."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    for s, e in zip(samples, entries):
        write_image(out / e["path"], s.image)
        write_mask(out / e["mask"], s.mask)
    manifest = Manifest(list(entries), out)
    save_manifest(manifest, out / "manifest.jsonl")
    return manifest


# ---------------------------------------------------------------------------
# Splits and normalisation
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    mean: list[float]
    std: list[float]

    def apply(self, images: np.ndarray) -> np.ndarray:
        """Normalise (N, C, H, W) images channel-wise."""
        m = np.asarray(self.mean)[None, :, None, None]
        s = np.asarray(self.std)[None, :, None, None]
        return (images - m) / s


def norm_stats(images: np.ndarray) -> NormStats:
    """Per-channel mean and std of (N, C, H, W) images; std floored at sqrt(1e-8)."""
    images = np.asarray(images, dtype=np.float64)
    mean = images.mean(axis=(0, 2, 3))
    var = images.var(axis=(0, 2, 3))
    std = np.sqrt(np.maximum(var, VARIANCE_FLOOR))
    return NormStats([float(v) for v in mean], [float(v) for v in std])


@dataclass
class Split:
    train: np.ndarray
    test: np.ndarray
    seed: int
    fraction: float
    stats: NormStats | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "fraction": self.fraction,
            "train": [int(i) for i in self.train],
            "test": [int(i) for i in self.test],
            "norm": None if self.stats is None else {"mean": self.stats.mean, "std": self.stats.std},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Split":
        norm = d.get("norm")
        return cls(
            np.asarray(d["train"], dtype=np.int64),
            np.asarray(d["test"], dtype=np.int64),
            int(d["seed"]),
            float(d["fraction"]),
            None if norm is None else NormStats(norm["mean"], norm["std"]),
        )


def save_split(split: Split, path) -> None:
    Path(path).write_text(json.dumps(split.to_dict()) + "\n", encoding="utf-8")


def load_split(path) -> Split:
    return Split.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def make_split(manifest: Manifest, test_fraction: float, seed: int) -> Split:
    """Seeded, label-stratified train/test split.

    The test set holds ``floor(N * f + 0.5)`` entries. Each label group
    (0, 1, then unlabelled) first gets ``floor(n_g * f)``; leftover slots go
    to the groups with the largest fractional remainder, lower label first on
    ties. Each group is shuffled and its prefix becomes test data.
    """
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError(f"test fraction must lie in [0, 1]; got {test_fraction}")
    groups: dict[Any, list[int]] = {}
    for i, e in enumerate(manifest.entries):
        groups.setdefault(e.get("label"), []).append(i)
    keys = sorted(groups, key=lambda k: (k is None, k if k is not None else 0))
    n_test = _round_half_up(len(manifest) * test_fraction)
    quota = {k: int(np.floor(len(groups[k]) * test_fraction)) for k in keys}
    remainders = sorted(keys, key=lambda k: (-(len(groups[k]) * test_fraction - quota[k]), keys.index(k)))
    for k in remainders[: max(0, n_test - sum(quota.values()))]:
        quota[k] += 1
    rng = np.random.default_rng(seed)
    train, test = [], []
    for k in keys:
        perm = np.asarray(groups[k])[rng.permutation(len(groups[k]))]
        test.extend(perm[: quota[k]])
        train.extend(perm[quota[k]:])
    return Split(np.sort(np.asarray(train, np.int64)), np.sort(np.asarray(test, np.int64)), seed, test_fraction)


# ---------------------------------------------------------------------------
# Loading and views
# ---------------------------------------------------------------------------

def load_images(manifest: Manifest, indices: Sequence[int] | None = None) -> np.ndarray:
    """Stack entries into an (N, C, H, W) float64 array with values in [0, 1]."""
    idx = range(len(manifest)) if indices is None else indices
    imgs = []
    for i in idx:
        path = manifest.resolve(int(i))
        if not os.path.exists(path):
            raise DatasetError(f"missing image file {path}")
        imgs.append(read_image(path).transpose(2, 0, 1))
    if not imgs:
        return np.zeros((0, 0, 0, 0))
    return np.stack(imgs)


@dataclass
class LabeledImages:
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class UnlabeledImages:
    images: np.ndarray

    def __len__(self) -> int:
        return len(self.images)


def _normalised(manifest, indices, stats: NormStats | None) -> np.ndarray:
    imgs = load_images(manifest, indices)
    return imgs if stats is None or len(imgs) == 0 else stats.apply(imgs)


def source_training_view(manifest: Manifest, indices, stats: NormStats | None) -> LabeledImages:
    idx = list(indices)
    for i in idx:
        if manifest[i].get("domain", "source") != "source":
            raise ManifestError(f"entry {i} is not a source-domain entry")
    return LabeledImages(_normalised(manifest, idx, stats), manifest.labels(idx))


def target_training_view(manifest: Manifest, indices, stats: NormStats | None) -> UnlabeledImages:
    """Target images for adversarial training; labels are never read."""
    return UnlabeledImages(_normalised(manifest, list(indices), stats))


def evaluation_view(manifest: Manifest, indices, stats: NormStats | None) -> LabeledImages:
    idx = list(indices)
    return LabeledImages(_normalised(manifest, idx, stats), manifest.labels(idx))


def batches(
    manifest: Manifest,
    indices: Sequence[int],
    batch_size: int,
    seed: int,
    epoch: int,
    stats: NormStats | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray | None]]:
    """Yield ``(images, labels)`` batches in an order reshuffled per epoch.

    The order is ``default_rng(mix(seed, epoch)).permutation``; the final
    batch may be short. ``labels`` is None unless every entry is labelled.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = np.asarray(indices, dtype=np.int64)
    order = idx[np.random.default_rng(mix(seed, epoch)).permutation(len(idx))]
    labelled = all(manifest[int(i)].get("label") is not None for i in idx)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        yield _normalised(manifest, chunk, stats), (manifest.labels(chunk) if labelled else None)

"""Procedural authentic/forged image corpora with exact ground truth.

Base images are smooth value-noise backgrounds with a few solid or
gradient-filled objects. Forgeries are either copy-move (a rectangle is
copied, post-processed and pasted elsewhere in the same image) or object
removal (an object's mask is filled by harmonic diffusion).

Per-item seeds come from :func:`mix`, a SplitMix64 finaliser::

    z = (a + (b + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2**64
    mix(a, b) = z ^ (z >> 31)

Item ``i`` of a corpus with master seed ``m`` uses base seed ``mix(m, i)``;
retry ``r >= 1`` uses ``mix(mix(m, i), r)``. The forgery parameters of an
item with base seed ``s`` are drawn from ``default_rng(mix(s, 2**32))``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
FORGE_STREAM = 1 << 32
AUTHENTIC, FORGED = 0, 1


class PlacementError(RuntimeError):
    """No valid disjoint source/paste placement was found."""


class SynthesisError(RuntimeError):
    """An item could not be generated within the retry budget."""


def mix(a: int, b: int) -> int:
    z = (int(a) + (int(b) + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionSpec:
    """Source rectangle and paste corner; ``object_index`` marks the removed
    object for inpainting forgeries (paste fields unused there)."""

    top: int
    left: int
    height: int
    width: int
    paste_top: int = 0
    paste_left: int = 0
    object_index: int = -1


@dataclass(frozen=True)
class TransformParams:
    rotation: float = 0.0
    scale: float = 1.0
    resize: float = 1.0
    blur_sigma: float = 0.0

    def is_identity(self) -> bool:
        return self.rotation % 360 == 0 and self.scale == 1 and self.resize == 1 and self.blur_sigma == 0


@dataclass(frozen=True)
class Provenance:
    mode: str  # "none" | "copy_move" | "inpaint_removal"
    seed: int
    region: RegionSpec | None = None
    transform: TransformParams | None = None
    brightness: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "region": None if self.region is None else asdict(self.region),
            "transform": None if self.transform is None else asdict(self.transform),
            "brightness": self.brightness,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Provenance":
        return cls(
            mode=d["mode"],
            seed=int(d["seed"]),
            region=None if d.get("region") is None else RegionSpec(**d["region"]),
            transform=None if d.get("transform") is None else TransformParams(**d["transform"]),
            brightness=float(d.get("brightness", 0.0)),
        )


@dataclass
class ForgedSample:
    image: np.ndarray  # (H, W, C) float64 in [0, 1]
    label: int
    mask: np.ndarray  # (H, W) bool
    provenance: Provenance

    def __post_init__(self):
        empty = not self.mask.any()
        if (self.label == AUTHENTIC) != empty or empty != (self.provenance.mode == "none"):
            raise ValueError("label, mask and provenance mode disagree")


@dataclass(frozen=True)
class SynthConfig:
    size: int = 100
    forged_fraction: float = 0.5
    height: int = 32
    width: int = 32
    channels: int = 3
    copy_move_prob: float = 1.0
    rotation_range: tuple[float, float] = (-30.0, 30.0)
    scale_range: tuple[float, float] = (0.9, 1.1)
    resize_range: tuple[float, float] = (0.9, 1.1)
    blur_range: tuple[float, float] = (0.0, 0.5)
    region_frac: tuple[float, float] = (0.25, 0.4)
    min_separation: int = 4
    noise_sigma: float = 0.0
    edge_softness: float = 2.0
    brightness_offset: float = 0.0
    seed: int = 0
    domain: str = "source"

    def __post_init__(self):
        if self.size < 0:
            raise ValueError("corpus size must be >= 0")
        if not 0.0 <= self.forged_fraction <= 1.0:
            raise ValueError("forged_fraction must lie in [0, 1]")
        if not 0.0 <= self.copy_move_prob <= 1.0:
            raise ValueError("copy_move_prob must lie in [0, 1]")
        if min(self.height, self.width) < 8 or self.channels not in (1, 3):
            raise ValueError("images need height, width >= 8 and 1 or 3 channels")
        for name in ("rotation_range", "scale_range", "resize_range", "blur_range", "region_frac"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} has lo > hi")
        if self.scale_range[0] <= 0 or self.resize_range[0] <= 0 or self.blur_range[0] < 0:
            raise ValueError("scale and resize must be > 0, blur sigma >= 0")
        if self.domain not in ("source", "target"):
            raise ValueError("domain must be 'source' or 'target'")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SynthConfig":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# ---------------------------------------------------------------------------
# Base images
# ---------------------------------------------------------------------------

def _smooth_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Value-noise interpolation with a smoothstep fade (C1-continuous)."""
    gh, gw = grid.shape[:2]
    ys = np.linspace(0, gh - 1, h)
    xs = np.linspace(0, gw - 1, w)
    y0 = np.minimum(np.floor(ys).astype(int), gh - 2)
    x0 = np.minimum(np.floor(xs).astype(int), gw - 2)
    fy = _smoothstep(ys - y0)[:, None, None]
    fx = _smoothstep(xs - x0)[None, :, None]
    a = grid[y0][:, x0]
    b = grid[y0][:, x0 + 1]
    c = grid[y0 + 1][:, x0]
    d = grid[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _coverage(dist: np.ndarray, softness: float) -> np.ndarray:
    """Object opacity from a signed distance (negative inside)."""
    if softness <= 0:
        return (dist <= 0).astype(np.float64)
    return _smoothstep(0.5 - dist / softness)


def _render_base(seed: int, dims: Sequence[int], noise_sigma: float = 0.0, edge_softness: float = 0.0):
    """Image plus the boolean support mask of every drawn object, in drawing order."""
    h, w = int(dims[0]), int(dims[1])
    c = int(dims[2]) if len(dims) > 2 else 3
    rng = np.random.default_rng(seed)
    grid = rng.uniform(0.15, 0.85, size=(5, 5, c))
    img = _smooth_upsample(grid, h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    masks = []
    for _ in range(int(rng.integers(2, 7))):
        kind = int(rng.integers(3))
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(0.08, 0.22) * min(h, w)
        if kind == 0:  # ellipse
            ry, rx = r * rng.uniform(0.6, 1.4), r * rng.uniform(0.6, 1.4)
            q = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
            dist = (q - 1.0) * math.sqrt(ry * rx)
        elif kind == 1:  # triangle
            ang = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
            py, px = cy + 1.4 * r * np.sin(ang), cx + 1.4 * r * np.cos(ang)
            edges = []
            for k in range(3):
                j = (k + 1) % 3
                cross = (px[j] - px[k]) * (yy - py[k]) - (py[j] - py[k]) * (xx - px[k])
                edges.append(cross / math.hypot(px[j] - px[k], py[j] - py[k]))
            # vertices are generated counter-clockwise in (x, y): inside is cross >= 0
            dist = -np.minimum.reduce(edges)
        else:  # disk
            dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) - r
        alpha = _coverage(dist, edge_softness)[..., None]
        color = rng.uniform(0.0, 1.0, size=c)
        if rng.random() < 0.5:
            color2 = rng.uniform(0.0, 1.0, size=c)
            t = np.clip(((yy - cy) * rng.normal() + (xx - cx) * rng.normal()) / (2 * r) + 0.5, 0, 1)[..., None]
            fill = color * (1 - t) + color2 * t
        else:
            fill = np.broadcast_to(color, (h, w, c))
        img = img * (1.0 - alpha) + fill * alpha
        masks.append(alpha[..., 0] > 0)
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0), masks


def gen_base_image(seed: int, dims: Sequence[int], noise_sigma: float = 0.0, edge_softness: float = 0.0) -> np.ndarray:
    """Deterministic procedural image of shape (H, W, C) with values in [0, 1]."""
    return _render_base(seed, dims, noise_sigma, edge_softness)[0]


# ---------------------------------------------------------------------------
# Patch transforms
# ---------------------------------------------------------------------------

def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _resample(img: np.ndarray, alpha: np.ndarray, factor: float):
    if factor == 1:
        return img, alpha
    h, w = img.shape[:2]
    nh, nw = max(1, int(round(h * factor))), max(1, int(round(w * factor)))
    # pixel-centre alignment
    ys = (np.arange(nh) + 0.5) * h / nh - 0.5
    xs = (np.arange(nw) + 0.5) * w / nw - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    out = _bilinear_sample(img, gy, gx)
    a = _bilinear_sample(alpha[..., None].astype(np.float64), gy, gx)[..., 0] >= 0.5
    return out, a


def _rotate(img: np.ndarray, alpha: np.ndarray, degrees: float):
    """Counter-clockwise rotation onto the bounding canvas of the result."""
    turns = degrees / 90.0
    if turns == int(turns):
        k = int(turns) % 4
        return np.rot90(img, k).copy(), np.rot90(alpha, k).copy()
    h, w = img.shape[:2]
    th = math.radians(degrees)
    cos, sin = math.cos(th), math.sin(th)
    nh = int(math.ceil(abs(h * cos) + abs(w * sin) - 1e-9))
    nw = int(math.ceil(abs(w * cos) + abs(h * sin) - 1e-9))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ncy, ncx = (nh - 1) / 2.0, (nw - 1) / 2.0
    gy, gx = np.mgrid[0:nh, 0:nw].astype(np.float64)
    dy, dx = gy - ncy, gx - ncx
    # inverse map: rotate output offsets clockwise back into the source frame
    sy = cy + dy * cos + dx * sin
    sx = cx - dy * sin + dx * cos
    inside = (sy >= -0.5) & (sy <= h - 0.5) & (sx >= -0.5) & (sx <= w - 0.5)
    out = _bilinear_sample(img, sy, sx)
    src_alpha = _bilinear_sample(alpha[..., None].astype(np.float64), sy, sx)[..., 0] >= 0.5
    return out, inside & src_alpha


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at 3 sigma, edge-replicated borders."""
    if sigma <= 0:
        return img
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        p = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, kv in enumerate(k):
            acc += kv * np.take(p, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def transform_patch(patch: np.ndarray, params: TransformParams, alpha: np.ndarray | None = None):
    """Scale, rotate, resize, then blur a patch (that fixed order).

    Returns ``(pixels, alpha)``; ``alpha`` is False where the rotated canvas
    has no source support.
    """
    patch = np.asarray(patch, dtype=np.float64)
    alpha = np.ones(patch.shape[:2], bool) if alpha is None else alpha
    if params.scale <= 0 or params.resize <= 0 or params.blur_sigma < 0:
        raise ValueError(f"invalid transform parameters {params}")
    out, a = _resample(patch, alpha, params.scale)
    if params.rotation % 360 != 0:
        out, a = _rotate(out, a, params.rotation)
    out, a = _resample(out, a, params.resize)
    if min(out.shape[:2]) < 4 or not a.any():
        raise ValueError(f"transformed patch {out.shape[:2]} is smaller than 4x4")
    out = gaussian_blur(out, params.blur_sigma)
    return out, a


# ---------------------------------------------------------------------------
# Copy-move
# ---------------------------------------------------------------------------

def _separated(a, b, sep: int) -> bool:
    """True when rectangles (top, left, h, w) are at least ``sep`` px apart on some axis."""
    at, al, ah, aw = a
    bt, bl, bh, bw = b
    gap_y = max(bt - (at + ah), at - (bt + bh))
    gap_x = max(bl - (al + aw), al - (bl + bw))
    return gap_y >= sep or gap_x >= sep


def apply_copy_move(image: np.ndarray, region: RegionSpec, params: TransformParams):
    """Copy, transform and paste; returns ``(forged image, mask)``."""
    h, w = image.shape[:2]
    src = image[region.top:region.top + region.height, region.left:region.left + region.width]
    patch, alpha = transform_patch(src, params)
    ph, pw = patch.shape[:2]
    if region.paste_top < 0 or region.paste_left < 0 or region.paste_top + ph > h or region.paste_left + pw > w:
        raise PlacementError("pasted footprint leaves the image")
    out = image.copy()
    mask = np.zeros((h, w), bool)
    mask[region.paste_top:region.paste_top + ph, region.paste_left:region.paste_left + pw] = alpha
    view = out[region.paste_top:region.paste_top + ph, region.paste_left:region.paste_left + pw]
    view[alpha] = np.clip(patch[alpha], 0.0, 1.0)
    return out, mask


def _uniform(rng: np.random.Generator, lo_hi) -> float:
    lo, hi = lo_hi
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def sample_copy_move(image_shape, rng: np.random.Generator, config: SynthConfig, attempts: int = 100):
    """Draw a valid (RegionSpec, TransformParams) by rejection sampling."""
    h, w = image_shape[:2]
    for _ in range(attempts):
        side = min(h, w)
        rh = int(round(_uniform(rng, config.region_frac) * side))
        rw = int(round(_uniform(rng, config.region_frac) * side))
        params = TransformParams(
            rotation=_uniform(rng, config.rotation_range),
            scale=_uniform(rng, config.scale_range),
            resize=_uniform(rng, config.resize_range),
            blur_sigma=_uniform(rng, config.blur_range),
        )
        if rh < 4 or rw < 4 or rh > h or rw > w:
            continue
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        try:
            ph, pw = transform_patch(np.zeros((rh, rw, 1)), params)[0].shape[:2]
        except ValueError:
            continue
        if ph > h or pw > w:
            continue
        pt = int(rng.integers(0, h - ph + 1))
        pl = int(rng.integers(0, w - pw + 1))
        if _separated((top, left, rh, rw), (pt, pl, ph, pw), config.min_separation):
            return RegionSpec(top, left, rh, rw, pt, pl), params
    raise PlacementError(f"no disjoint placement found in {attempts} attempts")


def make_copy_move(image: np.ndarray, seed: int, config: SynthConfig) -> ForgedSample:
    rng = np.random.default_rng(seed)
    region, params = sample_copy_move(image.shape, rng, config)
    out, mask = apply_copy_move(image, region, params)
    return ForgedSample(out, FORGED, mask, Provenance("copy_move", seed, region, params))


# ---------------------------------------------------------------------------
# Diffusion inpainting
# ---------------------------------------------------------------------------

def inpaint_remove(image: np.ndarray, mask: np.ndarray, tol: float = 1e-6, max_iter: int = 10_000) -> np.ndarray:
    """Fill ``mask`` with the discrete harmonic interpolant of its surroundings.

    Jacobi sweeps: every masked pixel becomes the mean of its in-image
    4-neighbours while unmasked pixels stay fixed. Stops when the largest
    per-pixel change drops below ``tol`` or after ``max_iter`` sweeps.
    """
    img = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, bool)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != image shape {img.shape[:2]}")
    if not mask.any():
        raise ValueError("inpainting mask is empty")
    if mask.all():
        raise ValueError("inpainting mask covers the whole image")
    h, w = mask.shape
    count = np.zeros((h, w))
    count[1:] += 1
    count[:-1] += 1
    count[:, 1:] += 1
    count[:, :-1] += 1
    out = img.copy()
    ring = _dilate(mask) & ~mask
    out[mask] = img[ring].mean(axis=0)
    for _ in range(max_iter):
        s = np.zeros_like(out)
        s[1:] += out[:-1]
        s[:-1] += out[1:]
        s[:, 1:] += out[:, :-1]
        s[:, :-1] += out[:, 1:]
        new = s[mask] / count[mask][:, None]
        delta = float(np.max(np.abs(new - out[mask])))
        out[mask] = new
        if delta < tol:
            break
    return out[..., 0] if squeeze else out


def _dilate(mask: np.ndarray) -> np.ndarray:
    d = mask.copy()
    d[1:] |= mask[:-1]
    d[:-1] |= mask[1:]
    d[:, 1:] |= mask[:, :-1]
    d[:, :-1] |= mask[:, 1:]
    return d


def removal_mask(object_masks, rng: np.random.Generator, min_area: int = 9):
    """Pick an object (dilated by one pixel) to remove; returns ``(index, mask)``."""
    choices = []
    for i, m in enumerate(object_masks):
        d = _dilate(m)
        if m.sum() >= min_area and not d.all() and d.sum() <= 0.5 * d.size:
            choices.append((i, d))
    if not choices:
        raise PlacementError("no removable object")
    return choices[int(rng.integers(len(choices)))]


def make_inpaint_removal(base_seed: int, seed: int, config: SynthConfig) -> ForgedSample:
    dims = (config.height, config.width, config.channels)
    image, masks = _render_base(base_seed, dims, config.noise_sigma, config.edge_softness)
    idx, mask = removal_mask(masks, np.random.default_rng(seed))
    out = inpaint_remove(image, mask)
    ys, xs = np.nonzero(mask)
    region = RegionSpec(int(ys.min()), int(xs.min()), int(ys.max() - ys.min()) + 1, int(xs.max() - xs.min()) + 1, object_index=idx)
    return ForgedSample(out, FORGED, mask, Provenance("inpaint_removal", seed, region, None))


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------

@dataclass
class SynthItem:
    sample: ForgedSample
    base_seed: int
    index: int


def _with_brightness(sample: ForgedSample, offset: float) -> ForgedSample:
    if offset == 0:
        return sample
    img = np.clip(sample.image + offset, 0.0, 1.0)
    p = sample.provenance
    return ForgedSample(img, sample.label, sample.mask, Provenance(p.mode, p.seed, p.region, p.transform, offset))


def item_roles(config: SynthConfig) -> list[str]:
    """Role per index: exactly round(size * forged_fraction) forged items,
    of which round(n_forged * copy_move_prob) are copy-move."""
    n_forged = int(round(config.size * config.forged_fraction))
    n_cm = int(round(n_forged * config.copy_move_prob))
    order = np.random.default_rng(mix(config.seed, MASK64)).permutation(config.size)
    roles = ["none"] * config.size
    for rank, i in enumerate(order[:n_forged]):
        roles[int(i)] = "copy_move" if rank < n_cm else "inpaint_removal"
    return roles


def generate_item(config: SynthConfig, index: int, role: str, retries: int = 10) -> SynthItem:
    dims = (config.height, config.width, config.channels)
    first = mix(config.seed, index)
    for r in range(retries + 1):
        base_seed = first if r == 0 else mix(first, r)
        forge_seed = mix(base_seed, FORGE_STREAM)
        try:
            if role == "none":
                img = gen_base_image(base_seed, dims, config.noise_sigma, config.edge_softness)
                sample = ForgedSample(img, AUTHENTIC, np.zeros(dims[:2], bool), Provenance("none", base_seed))
            elif role == "copy_move":
                img = gen_base_image(base_seed, dims, config.noise_sigma, config.edge_softness)
                sample = make_copy_move(img, forge_seed, config)
            else:
                sample = make_inpaint_removal(base_seed, forge_seed, config)
        except PlacementError:
            continue
        return SynthItem(_with_brightness(sample, config.brightness_offset), base_seed, index)
    raise SynthesisError(f"item {index} ({role}) failed after {retries} retries")


def replay(base_seed: int, provenance: Provenance, config: SynthConfig) -> ForgedSample:
    """Rebuild a sample from its recorded base seed and provenance."""
    dims = (config.height, config.width, config.channels)
    if provenance.mode == "none":
        img = gen_base_image(base_seed, dims, config.noise_sigma, config.edge_softness)
        sample = ForgedSample(img, AUTHENTIC, np.zeros(dims[:2], bool), Provenance("none", base_seed))
    elif provenance.mode == "copy_move":
        img = gen_base_image(base_seed, dims, config.noise_sigma, config.edge_softness)
        out, mask = apply_copy_move(img, provenance.region, provenance.transform)
        sample = ForgedSample(out, FORGED, mask, Provenance("copy_move", provenance.seed, provenance.region, provenance.transform))
    else:
        img, masks = _render_base(base_seed, dims, config.noise_sigma, config.edge_softness)
        mask = _dilate(masks[provenance.region.object_index])
        sample = ForgedSample(inpaint_remove(img, mask), FORGED, mask, Provenance("inpaint_removal", provenance.seed, provenance.region))
    return _with_brightness(sample, provenance.brightness)


def synthesize_dataset(config: SynthConfig):
    """Generate a corpus; returns ``(samples, manifest entries)``.

    Entry ``i`` points at ``images/{i:06d}.ppm`` (``.pgm`` for one channel)
    and ``masks/{i:06d}.pgm`` relative to the manifest.
    """
    samples, entries = [], []
    ext = "ppm" if config.channels == 3 else "pgm"
    for i, role in enumerate(item_roles(config)):
        item = generate_item(config, i, role)
        s = item.sample
        prov = s.provenance.to_dict()
        samples.append(s)
        entries.append({
            "path": f"images/{i:06d}.{ext}",
            "label": s.label,
            "domain": config.domain,
            "mode": prov["mode"],
            "seed": item.base_seed,
            "region": prov["region"],
            "transform": prov["transform"],
            "mask": f"masks/{i:06d}.pgm",
            "forge_seed": prov["seed"],
            "brightness": prov["brightness"],
        })
    return samples, entries

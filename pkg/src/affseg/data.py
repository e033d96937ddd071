"""Dataset ingestion, deterministic augmentation, and the synthetic
organ/tumor generator used for desk-scale end-to-end verification.

All randomness flows through explicit generators; per-sample streams are
derived from (seed, sample index or id) so parallel loading cannot change
the emitted data.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import FORMAT_VERSION
from .errors import ConfigError, DataError, GenerationError

# class ids in synthetic masks
BACKGROUND, ORGAN, TUMOR = 0, 1, 2

_BASE_INTENSITY = {BACKGROUND: 0.15, ORGAN: 0.55, TUMOR: 0.9}


@dataclass
class SegmentationSample:
    image: np.ndarray           # [in_channels, H, W], float in [0, 1]
    mask: np.ndarray            # [H, W], integer class ids
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.mask.ndim != 2:
            raise DataError(f"sample {self.id}: image must be [C,H,W], mask [H,W]")
        if self.image.shape[1:] != self.mask.shape:
            raise DataError(f"sample {self.id}: image {self.image.shape} vs mask {self.mask.shape}")


@dataclass(frozen=True)
class ShapeSpec:
    count: int = 1
    radius_range: tuple[float, float] = (10.0, 16.0)


@dataclass(frozen=True)
class TumorSpec(ShapeSpec):
    count: int = 2
    radius_range: tuple[float, float] = (2.0, 4.0)
    inside_organ: bool = True


@dataclass(frozen=True)
class SyntheticSpec:
    canvas: tuple[int, int] = (64, 64)
    organ: ShapeSpec = field(default_factory=ShapeSpec)
    tumor: TumorSpec = field(default_factory=TumorSpec)
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.organ, dict):
            object.__setattr__(self, "organ", ShapeSpec(**self.organ))
        if isinstance(self.tumor, dict):
            object.__setattr__(self, "tumor", TumorSpec(**self.tumor))
        object.__setattr__(self, "canvas", tuple(self.canvas))
        if self.organ.count < 0 or self.tumor.count < 0:
            raise ConfigError("shape counts must be >= 0")
        if self.tumor.count and self.organ.count and \
                self.tumor.radius_range[1] >= self.organ.radius_range[0]:
            raise ConfigError(
                f"tumor radii {self.tumor.radius_range} must stay below"
                f" organ radii {self.organ.radius_range}")

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticSpec":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"synthetic spec {path} is not valid JSON: {exc}") from exc
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"malformed synthetic spec: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def _ellipse_mask(h: int, w: int, cy: float, cx: float, ry: float, rx: float,
                  theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(theta) + dx * np.sin(theta)
    v = -dy * np.sin(theta) + dx * np.cos(theta)
    return (u / ry) ** 2 + (v / rx) ** 2 <= 1.0


_MAX_TRIES = 200


def _generate_one(spec: SyntheticSpec, rng: np.random.Generator, sid: str) -> SegmentationSample:
    h, w = spec.canvas
    mask = np.zeros((h, w), dtype=np.int64)
    organ_region = np.zeros((h, w), dtype=bool)
    for _ in range(spec.organ.count):
        lo, hi = spec.organ.radius_range
        for _ in range(_MAX_TRIES):
            ry, rx = rng.uniform(lo, hi, size=2)
            r = max(ry, rx)
            if h - 2 * r <= 0 or w - 2 * r <= 0:
                raise GenerationError(
                    f"organ radius {r:.1f} cannot fit the {h}x{w} canvas")
            cy = rng.uniform(r, h - r)
            cx = rng.uniform(r, w - r)
            region = _ellipse_mask(h, w, cy, cx, ry, rx, rng.uniform(0, np.pi))
            if region.any():
                organ_region |= region
                break
        else:
            raise GenerationError("could not place an organ ellipse inside the canvas")
    mask[organ_region] = ORGAN

    for _ in range(spec.tumor.count):
        lo, hi = spec.tumor.radius_range
        placed = False
        for _ in range(_MAX_TRIES):
            r = rng.uniform(lo, hi)
            cy = rng.uniform(r, h - r)
            cx = rng.uniform(r, w - r)
            disk = _ellipse_mask(h, w, cy, cx, r, r, 0.0)
            if not disk.any():
                continue
            if spec.tumor.inside_organ and not (disk <= organ_region).all():
                continue
            mask[disk] = TUMOR
            placed = True
            break
        if not placed:
            raise GenerationError(
                "could not place a tumor disk"
                + (" inside an organ" if spec.tumor.inside_organ else " on the canvas"))

    image = np.zeros((h, w))
    for cid, base in _BASE_INTENSITY.items():
        image[mask == cid] = base
    if spec.noise_std > 0:
        image = image + rng.normal(0.0, spec.noise_std, size=(h, w))
    image = np.clip(image, 0.0, 1.0)
    return SegmentationSample(image=image[None, :, :], mask=mask, id=sid)


def generate_synthetic(spec: SyntheticSpec, n: int) -> list[SegmentationSample]:
    """n fully seed-determined samples: organ ellipses (class 1) carrying
    tumor disks (class 2), intensity = class base + Gaussian noise."""
    samples = []
    for k in range(n):
        rng = np.random.default_rng([spec.seed, k])
        samples.append(_generate_one(spec, rng, f"synth_{k:04d}"))
    return samples


def num_classes_of(spec: SyntheticSpec) -> int:
    if spec.tumor.count > 0:
        return 3
    return 2 if spec.organ.count > 0 else 1


# -- PNG directory interchange ------------------------------------------------

def save_directory(samples: list[SegmentationSample], path: str | Path) -> list[Path]:
    """Write ``<id>_img.png`` / ``<id>_mask.png`` pairs (8-bit grayscale)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in samples:
        img8 = np.round(s.image[0] * 255.0).astype(np.uint8)
        img_path = out / f"{s.id}_img.png"
        mask_path = out / f"{s.id}_mask.png"
        Image.fromarray(img8, mode="L").save(img_path)
        Image.fromarray(s.mask.astype(np.uint8), mode="L").save(mask_path)
        written += [img_path, mask_path]
    return written


def load_directory(path: str | Path, num_classes: int | None = None) -> list[SegmentationSample]:
    """Load all PNG pairs, sorted by id. Orphan files or out-of-range mask
    values raise DataError."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    imgs = {p.name[:-len("_img.png")]: p for p in root.glob("*_img.png")}
    masks = {p.name[:-len("_mask.png")]: p for p in root.glob("*_mask.png")}
    orphans = sorted(set(imgs) ^ set(masks))
    if orphans:
        raise DataError(f"unpaired image/mask file(s) for id(s): {', '.join(orphans)}")
    samples = []
    for sid in sorted(imgs):
        image = np.asarray(Image.open(imgs[sid]).convert("L"), dtype=np.float64) / 255.0
        mask = np.asarray(Image.open(masks[sid]).convert("L"), dtype=np.int64)
        if num_classes is not None and mask.max() >= num_classes:
            raise DataError(
                f"sample {sid}: mask value {mask.max()} >= num_classes {num_classes}")
        samples.append(SegmentationSample(image=image[None], mask=mask, id=sid))
    return samples


# -- deterministic augmentation ------------------------------------------------

def sample_rng(seed: int, sample_id: str, salt: int = 0) -> np.random.Generator:
    """Per-sample stream: identical regardless of worker or iteration order."""
    return np.random.default_rng([seed, zlib.crc32(sample_id.encode()), salt])


def augment(s: SegmentationSample, rng: np.random.Generator,
            hflip_prob: float, rotate_max_deg: float) -> SegmentationSample:
    """Horizontal flip + rotation, applied identically to image and mask
    (bilinear for the image, nearest for the mask, zero fill outside)."""
    image, mask = s.image, s.mask
    if hflip_prob > 0 and rng.uniform() < hflip_prob:
        image = image[:, :, ::-1].copy()
        mask = mask[:, ::-1].copy()
    if rotate_max_deg > 0:
        angle = rng.uniform(-rotate_max_deg, rotate_max_deg)
        image = np.stack([
            ndimage.rotate(ch, angle, reshape=False, order=1, mode="constant",
                           cval=0.0, prefilter=False)
            for ch in image
        ])
        mask = ndimage.rotate(mask, angle, reshape=False, order=0, mode="constant",
                              cval=0, prefilter=False)
    return SegmentationSample(image=image, mask=mask, id=s.id)


def _resize_plane(plane: np.ndarray, th: int, tw: int, nearest: bool) -> np.ndarray:
    h, w = plane.shape
    if (h, w) == (th, tw):
        return plane.copy()
    sy, sx = h / th, w / tw
    cy = (np.arange(th) + 0.5) * sy - 0.5
    cx = (np.arange(tw) + 0.5) * sx - 0.5
    if nearest:
        iy = np.clip(np.round(cy), 0, h - 1).astype(int)
        ix = np.clip(np.round(cx), 0, w - 1).astype(int)
        return plane[np.ix_(iy, ix)]
    y0 = np.clip(np.floor(cy), 0, h - 1).astype(int)
    x0 = np.clip(np.floor(cx), 0, w - 1).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(cy - y0, 0.0, 1.0)[:, None]
    fx = np.clip(cx - x0, 0.0, 1.0)[None, :]
    tl = plane[np.ix_(y0, x0)]
    tr = plane[np.ix_(y0, x1)]
    bl = plane[np.ix_(y1, x0)]
    br = plane[np.ix_(y1, x1)]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return top * (1 - fy) + bot * fy


def resize(s: SegmentationSample, target: tuple[int, int]) -> SegmentationSample:
    """Bilinear image resize, nearest-neighbor mask resize."""
    th, tw = target
    image = np.stack([_resize_plane(ch, th, tw, nearest=False) for ch in s.image])
    mask = _resize_plane(s.mask, th, tw, nearest=True)
    return SegmentationSample(image=image, mask=mask, id=s.id)


def split(samples: list[SegmentationSample],
          fractions: tuple[float, float, float] = (0.80, 0.15, 0.05),
          seed: int = 0):
    """Deterministic shuffled partition into (train, val, test); each split
    gets at least one sample."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    n = len(samples)
    if n < 3:
        raise DataError(f"need >= 3 samples to split, got {n}")
    n_val = max(1, int(n * fractions[1]))
    n_test = max(1, int(n * fractions[2]))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise DataError(f"split {fractions} leaves no training samples for n={n}")
    order = np.random.default_rng(seed).permutation(n)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return train, val, test


def write_manifest(path: str | Path, spec: SyntheticSpec, ids: list[str]) -> Path:
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": spec.to_dict(),
        "n": len(ids),
        "ids": ids,
        "num_classes": num_classes_of(spec),
    }
    p = Path(path)
    p.write_text(json.dumps(manifest, indent=2) + "\n")
    return p

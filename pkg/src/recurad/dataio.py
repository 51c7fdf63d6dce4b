"""Dataset indexing (MVTec-style folders), image I/O, and synthetic textures.

Folder layout::

    root/<category>/train/good/*.png
    root/<category>/test/good/*.png
    root/<category>/test/<defect>/*.png
    root/<category>/ground_truth/<defect>/<stem>_mask.png
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from . import augment

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class DatasetIndexError(FileNotFoundError):
    pass


class DecodeError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # C x H x W float32 in [0, 1]
    label: int = 0
    mask: Optional[np.ndarray] = None  # 1 x H x W {0, 1}
    defect: str = "good"
    path: Optional[str] = None


@dataclass
class CategoryData:
    train: List[Sample] = field(default_factory=list)
    test: List[Sample] = field(default_factory=list)

    def train_array(self) -> np.ndarray:
        return np.stack([s.image for s in self.train])


@dataclass
class DatasetIndex:
    root: Optional[str]
    resolution: int
    categories: Dict[str, CategoryData]

    def train_array(self) -> np.ndarray:
        """All training images of every category, in index order."""
        return np.concatenate([c.train_array() for c in self.categories.values() if c.train])

    def test_samples(self) -> List[Sample]:
        return [s for c in self.categories.values() for s in c.test]


# image I/O

def _to_float(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    if arr.dtype in (np.uint16, np.int32, np.uint32) or arr.dtype.kind in "iu":
        return arr.astype(np.float32) / 65535.0
    if arr.dtype == bool:
        return arr.astype(np.float32)
    return arr.astype(np.float32)


def _resize_channel(ch: np.ndarray, resolution: int, resample) -> np.ndarray:
    if ch.shape == (resolution, resolution):
        return ch
    img = Image.fromarray(np.ascontiguousarray(ch, dtype=np.float32))
    return np.asarray(img.resize((resolution, resolution), resample), dtype=np.float32)


def read_image(path, resolution: Optional[int] = None, channels: int = 3) -> np.ndarray:
    """Decode to C x H x W float32 in [0, 1]; gray is replicated to ``channels``."""
    try:
        with Image.open(path) as im:
            if im.mode in ("P", "RGBA", "LA", "CMYK", "YCbCr"):
                im = im.convert("RGB")
            arr = np.array(im)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    arr = _to_float(arr)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    if arr.shape[0] == 1 and channels > 1:
        arr = np.repeat(arr, channels, axis=0)
    elif arr.shape[0] != channels:
        raise DecodeError(f"{path}: {arr.shape[0]} channels, expected {channels}")
    if resolution is not None:
        arr = np.stack([_resize_channel(c, resolution, Image.BILINEAR) for c in arr])
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def read_mask(path, resolution: Optional[int] = None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.array(im.convert("L") if im.mode not in ("L", "I;16", "I", "1") else im)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode mask {path}: {exc}") from exc
    if arr.ndim == 3:
        arr = arr.max(axis=-1)
    m = (arr > 0).astype(np.float32)
    if resolution is not None:
        m = _resize_channel(m, resolution, Image.NEAREST)
    return (m > 0.5).astype(np.float32)[None]


def write_image(path, image: np.ndarray) -> None:
    """8-bit PNG from C x H x W floats in [0, 1]."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    arr = arr[0] if arr.shape[0] == 1 else np.moveaxis(arr, 0, -1)
    Image.fromarray(arr).save(path)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask).reshape(mask.shape[-2:]) > 0).astype(np.uint8) * 255).save(path)


def save_map(scores: np.ndarray, path) -> None:
    """16-bit grayscale PNG holding round(score * 65535)."""
    scores = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    q = np.clip(np.rint(scores.reshape(scores.shape[-2:]) * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(q).save(path)


def load_map(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im)
    return (arr.astype(np.float64) / 65535.0)[None]


# folder datasets

def _images_in(folder: Path) -> List[Path]:
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _find_mask(gt_dir: Path, stem: str) -> Optional[Path]:
    for cand in (f"{stem}_mask", stem):
        for suffix in IMAGE_SUFFIXES:
            p = gt_dir / f"{cand}{suffix}"
            if p.exists():
                return p
    return None


def load_dataset(root, resolution: int = 128, categories=None, channels: int = 3) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise DatasetIndexError(f"dataset root {root} does not exist")
    names = sorted(p.name for p in root.iterdir() if p.is_dir() and (p / "train").is_dir())
    if categories:
        missing = sorted(set(categories) - set(names))
        if missing:
            raise DatasetIndexError(f"categories {missing} not found under {root}")
        names = [n for n in names if n in set(categories)]
    if not names:
        raise DatasetIndexError(f"no <category>/train folders under {root}")
    cats: Dict[str, CategoryData] = {}
    for name in names:
        base = root / name
        data = CategoryData()
        for p in _images_in(base / "train" / "good"):
            data.train.append(Sample(read_image(p, resolution, channels), path=str(p)))
        test_dir = base / "test"
        defects = sorted(d.name for d in test_dir.iterdir() if d.is_dir()) if test_dir.is_dir() else []
        for defect in defects:
            for p in _images_in(test_dir / defect):
                img = read_image(p, resolution, channels)
                if defect == "good":
                    data.test.append(Sample(img, 0, None, defect, str(p)))
                    continue
                mp = _find_mask(base / "ground_truth" / defect, p.stem)
                if mp is None:
                    raise DatasetIndexError(f"no ground-truth mask for defect image {p}")
                data.test.append(Sample(img, 1, read_mask(mp, resolution), defect, str(p)))
        cats[name] = data
    return DatasetIndex(str(root), resolution, cats)


# synthetic textures

@dataclass
class SynthSpec:
    textures: Tuple[str, ...] = ("stripes", "checker")
    resolution: int = 64
    train_count: int = 32
    test_count: int = 50
    seed: int = 7
    period: int = 8
    noise: float = 0.01
    anomaly_kinds: Tuple[str, ...] = augment.KINDS
    augment: augment.AugmentConfig = augment.AugmentConfig()
    # test anomalies smaller / fainter than this are redrawn
    min_anomaly_area: int = 4
    min_anomaly_contrast: float = 0.1


_PALETTE = {
    "stripes": ((0.20, 0.25, 0.35), (0.80, 0.72, 0.55)),
    "checker": ((0.30, 0.30, 0.30), (0.70, 0.70, 0.70)),
    "blobs": ((0.45, 0.30, 0.20), (0.65, 0.55, 0.40)),
}


def texture_pattern(kind: str, resolution: int, period: int, phase: Tuple[int, int] = (0, 0),
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Binary H x W layout in {0, 1} before colouring."""
    yy, xx = np.mgrid[0:resolution, 0:resolution]
    py, px = phase
    if kind == "stripes":
        return (((xx + px) % period) < period // 2).astype(np.float32)
    if kind == "checker":
        half = period // 2
        return ((((yy + py) // half) + ((xx + px) // half)) % 2).astype(np.float32)
    if kind == "blobs":
        rng = rng if rng is not None else np.random.default_rng(0)
        field_ = gaussian_filter(rng.standard_normal((resolution, resolution)), period / 2, mode="wrap")
        return (field_ > 0).astype(np.float32)
    raise ValueError(f"unknown texture {kind!r}")


def render_texture(kind: str, resolution: int, rng: np.random.Generator, period: int = 8,
                   noise: float = 0.01) -> np.ndarray:
    """Coloured texture with random phase and mild brightness/contrast/noise jitter."""
    phase = (int(rng.integers(0, period)), int(rng.integers(0, period)))
    pattern = texture_pattern(kind, resolution, period, phase, rng)
    lo, hi = (np.array(c, dtype=np.float32)[:, None, None] for c in _PALETTE[kind])
    img = lo + (hi - lo) * pattern[None]
    contrast = rng.uniform(0.9, 1.1)
    bright = rng.uniform(-0.05, 0.05)
    img = (img - 0.5) * contrast + 0.5 + bright
    img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _draw_test_anomaly(img, rng, spec: SynthSpec, tries: int = 50) -> augment.PseudoAnomaly:
    cfg = augment.AugmentConfig(**{**spec.augment.__dict__, "clean_probability": 0.0})
    pa = None
    for _ in range(tries):
        pa = augment.sample(img, rng, cfg, spec.anomaly_kinds)
        area = int(pa.mask.sum())
        if area < spec.min_anomaly_area:
            continue
        m = pa.mask[0] > 0
        contrast = float(np.abs(pa.corrupted[:, m] - img[:, m]).mean())
        if contrast >= spec.min_anomaly_contrast:
            return pa
    return pa


def generate_synthetic(spec: SynthSpec = SynthSpec()) -> DatasetIndex:
    """Deterministic texture dataset; test split is half clean, half pseudo-anomalous."""
    cats: Dict[str, CategoryData] = {}
    for t_idx, kind in enumerate(spec.textures):
        rng = np.random.default_rng([spec.seed, t_idx])
        data = CategoryData()
        for i in range(spec.train_count):
            data.train.append(Sample(render_texture(kind, spec.resolution, rng, spec.period, spec.noise),
                                     path=f"synthetic/{kind}/train/good/{i:03d}.png"))
        n_bad = spec.test_count // 2
        for i in range(spec.test_count - n_bad):
            data.test.append(Sample(render_texture(kind, spec.resolution, rng, spec.period, spec.noise),
                                    path=f"synthetic/{kind}/test/good/{i:03d}.png"))
        for i in range(n_bad):
            img = render_texture(kind, spec.resolution, rng, spec.period, spec.noise)
            pa = _draw_test_anomaly(img, rng, spec)
            data.test.append(Sample(pa.corrupted, 1, pa.mask, pa.kind,
                                    f"synthetic/{kind}/test/{pa.kind}/{i:03d}.png"))
        cats[kind] = data
    return DatasetIndex(None, spec.resolution, cats)


def write_dataset(index: DatasetIndex, root) -> Path:
    """Materialise an index in the folder layout (used for synthetic sets)."""
    root = Path(root)
    for name, cat in index.categories.items():
        for split, samples in (("train", cat.train), ("test", cat.test)):
            for i, s in enumerate(samples):
                d = root / name / split / s.defect
                d.mkdir(parents=True, exist_ok=True)
                stem = Path(s.path).stem if s.path else f"{i:03d}"
                write_image(d / f"{stem}.png", s.image)
                if s.mask is not None:
                    g = root / name / "ground_truth" / s.defect
                    g.mkdir(parents=True, exist_ok=True)
                    write_mask(g / f"{stem}_mask.png", s.mask)
    return root

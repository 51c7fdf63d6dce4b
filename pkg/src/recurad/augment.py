"""Pseudo-anomaly generators.

Each generator returns the corrupted image together with a binary mask that
is, by construction, exactly the set of pixels whose value changed in any
channel. Sizes are specified at a 1024-pixel reference resolution and scaled
linearly to the image.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

KINDS = ("color_block", "copy_paste", "lines")


@dataclass(frozen=True)
class AugmentConfig:
    block_sizes: Tuple[int, ...] = (32, 64, 128)
    reference_size: int = 1024
    coverage: Tuple[float, float] = (0.0, 1.0)
    line_count: Tuple[int, int] = (1, 4)
    line_length: Tuple[float, float] = (50.0, 150.0)
    line_width: Tuple[int, int] = (1, 3)
    clean_probability: float = 0.0

    def validate(self) -> "AugmentConfig":
        lo, hi = self.coverage
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"coverage bounds {self.coverage} outside [0, 1]")
        if not 1 <= self.line_count[0] <= self.line_count[1]:
            raise ValueError(f"bad line_count {self.line_count}")
        if not 0 < self.line_length[0] <= self.line_length[1]:
            raise ValueError(f"bad line_length {self.line_length}")
        if not 1 <= self.line_width[0] <= self.line_width[1]:
            raise ValueError(f"bad line_width {self.line_width}")
        if not 0.0 <= self.clean_probability <= 1.0:
            raise ValueError(f"bad clean_probability {self.clean_probability}")
        return self

    def scaled_block_sizes(self, size: int) -> Tuple[int, ...]:
        return tuple(max(2, int(round(b * size / self.reference_size))) for b in self.block_sizes)

    def scaled_line_length(self, size: int) -> Tuple[float, float]:
        s = size / self.reference_size
        return max(2.0, self.line_length[0] * s), max(2.0, self.line_length[1] * s)


@dataclass
class PseudoAnomaly:
    corrupted: np.ndarray  # C x H x W
    mask: np.ndarray  # 1 x H x W, {0, 1}
    kind: str
    meta: dict = field(default_factory=dict)


def diff_mask(original: np.ndarray, corrupted: np.ndarray) -> np.ndarray:
    return np.any(original != corrupted, axis=0, keepdims=True).astype(np.float32)


def _finish(img, out, kind, **meta) -> PseudoAnomaly:
    out = np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)
    return PseudoAnomaly(out, diff_mask(img, out), kind, meta)


def _block_size(img, rng, cfg) -> int:
    h, w = img.shape[-2:]
    return min(int(rng.choice(cfg.scaled_block_sizes(min(h, w)))), h, w)


def inject_color_block(img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig(),
                       size: Optional[int] = None, coverage: Optional[float] = None) -> PseudoAnomaly:
    """Replace a ``coverage`` fraction of a random square block with one random color."""
    c, h, w = img.shape
    size = _block_size(img, rng, cfg) if size is None else min(size, h, w)
    coverage = float(rng.uniform(*cfg.coverage)) if coverage is None else coverage
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    color = rng.uniform(0.0, 1.0, size=(c, 1)).astype(img.dtype)
    n_pix = int(round(coverage * size * size))
    chosen = rng.choice(size * size, size=n_pix, replace=False)
    out = img.copy()
    ys, xs = y0 + chosen // size, x0 + chosen % size
    out[:, ys, xs] = color
    return _finish(img, out, "color_block", box=(y0, x0, size), coverage=coverage)


def _disjoint_positions(rng, h, w, size, tries: int = 100):
    for _ in range(tries):
        src = (int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)))
        dst = (int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)))
        if abs(src[0] - dst[0]) >= size or abs(src[1] - dst[1]) >= size:
            return src, dst
    return None


def inject_copy_paste(img: np.ndarray, rng: np.random.Generator,
                      cfg: AugmentConfig = AugmentConfig(), size: Optional[int] = None) -> PseudoAnomaly:
    """Copy a square patch onto a non-overlapping location of the same image."""
    c, h, w = img.shape
    size = _block_size(img, rng, cfg) if size is None else min(size, h, w)
    # shrink until two disjoint squares fit
    while size > 1 and 2 * size > max(h, w):
        size //= 2
    pos = _disjoint_positions(rng, h, w, size)
    if pos is None:
        return PseudoAnomaly(img.copy(), np.zeros((1, h, w), np.float32), "copy_paste", {})
    (sy, sx), (dy, dx) = pos
    out = img.copy()
    out[:, dy:dy + size, dx:dx + size] = img[:, sy:sy + size, sx:sx + size]
    return _finish(img, out, "copy_paste", src=(sy, sx), dst=(dy, dx), size=size)


def polyline(rng: np.random.Generator, length: float, h: int, w: int, segments: int = 3) -> np.ndarray:
    """Crack-like polyline of total length ``length`` placed inside an h x w frame.

    Heading turns by up to 45 degrees between segments. Returns vertices as a
    (segments+1) x 2 array of (y, x) floats.
    """
    seg = rng.dirichlet(np.ones(segments)) * length
    heading = rng.uniform(0, 2 * np.pi)
    pts = [np.zeros(2)]
    for s in seg:
        pts.append(pts[-1] + s * np.array([np.sin(heading), np.cos(heading)]))
        heading += rng.uniform(-np.pi / 4, np.pi / 4)
    pts = np.array(pts)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    limits = np.array([h - 1, w - 1], dtype=float)
    offset = np.empty(2)
    for a in range(2):
        slack = limits[a] - span[a]
        offset[a] = -lo[a] + (rng.uniform(0, slack) if slack > 0 else 0.0)
    return np.clip(pts + offset, 0, limits)


def rasterize_polyline(pts: np.ndarray, width: int, h: int, w: int) -> np.ndarray:
    hit = np.zeros((h, w), dtype=bool)
    r0 = -((width - 1) // 2)
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(2, int(np.ceil(np.linalg.norm(b - a) * 4)) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        centers = np.rint(a + t * (b - a)).astype(int)
        for dy in range(r0, r0 + width):
            for dx in range(r0, r0 + width):
                yy = np.clip(centers[:, 0] + dy, 0, h - 1)
                xx = np.clip(centers[:, 1] + dx, 0, w - 1)
                hit[yy, xx] = True
    return hit


def inject_lines(img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> PseudoAnomaly:
    """Paint 1-4 dark or light crack-like strokes."""
    c, h, w = img.shape
    count = int(rng.integers(cfg.line_count[0], cfg.line_count[1] + 1))
    lmin, lmax = cfg.scaled_line_length(min(h, w))
    out = img.copy()
    strokes = []
    for _ in range(count):
        length = float(rng.uniform(lmin, lmax))
        width = int(rng.integers(cfg.line_width[0], cfg.line_width[1] + 1))
        pts = polyline(rng, length, h, w)
        value = rng.uniform(0.0, 0.15) if rng.random() < 0.5 else rng.uniform(0.85, 1.0)
        out[:, rasterize_polyline(pts, width, h, w)] = value
        strokes.append({"vertices": pts, "length": length, "width": width})
    return _finish(img, out, "lines", count=count, strokes=strokes)


_GENERATORS = {
    "color_block": inject_color_block,
    "copy_paste": inject_copy_paste,
    "lines": inject_lines,
}


def sample(img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig(),
           kinds: Tuple[str, ...] = KINDS) -> PseudoAnomaly:
    """Draw ``none`` with ``cfg.clean_probability``, otherwise a uniformly chosen generator."""
    if cfg.clean_probability > 0 and rng.random() < cfg.clean_probability:
        c, h, w = img.shape
        return PseudoAnomaly(img.copy(), np.zeros((1, h, w), np.float32), "none")
    kind = kinds[int(rng.integers(0, len(kinds)))]
    return _GENERATORS[kind](img, rng, cfg)

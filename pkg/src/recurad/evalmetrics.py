"""Top-k image scores, AUROC, SSIM/PSNR and the per-category evaluation report."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_CAP = 100.0


class MetricError(ValueError):
    """Raised when a metric is undefined for its input (e.g. one class only)."""


def topk_count(n_pixels: int, k_fraction: float) -> int:
    if not 0.0 < k_fraction <= 1.0:
        raise ValueError(f"k_fraction must be in (0, 1], got {k_fraction}")
    # round first so 0.001 * 1000 does not ceil to 2 through float noise
    return max(1, math.ceil(round(k_fraction * n_pixels, 9)))


def image_score_topk(scores: np.ndarray, k_fraction: float = 0.001) -> float:
    """Mean of the ceil(k_fraction * P) largest pixel scores."""
    flat = np.asarray(scores, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        raise MetricError("empty anomaly map")
    k = topk_count(flat.size, k_fraction)
    return float(np.partition(flat, flat.size - k)[flat.size - k:].mean())


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with tied pairs counted one half.

    One sort of the pooled scores; tie groups get their average rank.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores vs {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both positive and negative labels")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # average rank per tie group (ranks start at 1)
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    group_rank = (starts + 1 + ends) / 2.0
    ranks = np.empty(s.size, dtype=np.float64)
    ranks[order] = np.repeat(group_rank, ends - starts)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_exhaustive(scores, labels) -> float:
    """O(P*N) pairwise count; reference for ``auroc``."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUROC needs both positive and negative labels")
    wins = 0.0
    for p in pos:
        wins += float(np.sum(p > neg)) + 0.5 * float(np.sum(p == neg))
    return wins / (pos.size * neg.size)


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(data_range ** 2 / mse)))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, data_range: float = 1.0, sigma: float = 1.5) -> float:
    """Gaussian-window SSIM on C x H x W (or H x W) images, averaged over channels.

    Statistics use population covariance; the mean is taken over pixels at
    least ``window // 2`` away from the border.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    pad = (window - 1) // 2
    if min(a.shape[-2:]) < window:
        raise MetricError(f"image {a.shape[-2:]} smaller than window {window}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    truncate = pad / sigma
    vals = []
    for x, y in zip(a, b):
        f = lambda t: gaussian_filter(t, sigma, truncate=truncate, mode="reflect")
        mx, my = f(x), f(y)
        vx = f(x * x) - mx * mx
        vy = f(y * y) - my * my
        cxy = f(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(s[pad:-pad, pad:-pad].mean())
    return float(np.mean(vals))


class Scorer(Protocol):
    def score(self, images: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Anomaly maps (B x 1 x H x W) and optionally reconstructions (B x C x H x W)."""


@dataclass
class CategoryReport:
    category: str
    i_auroc: float
    p_auroc: float
    ssim: float
    psnr: float
    image_scores: List[float] = field(default_factory=list)
    labels: List[int] = field(default_factory=list)
    paths: List[str] = field(default_factory=list)


@dataclass
class EvalReport:
    k_fraction: float
    categories: List[CategoryReport]

    @property
    def image_auroc(self) -> float:
        return float(np.mean([c.i_auroc for c in self.categories]))

    @property
    def pixel_auroc(self) -> float:
        return float(np.mean([c.p_auroc for c in self.categories]))

    @property
    def mean_ssim(self) -> float:
        return float(np.nanmean([c.ssim for c in self.categories]))

    @property
    def mean_psnr(self) -> float:
        return float(np.nanmean([c.psnr for c in self.categories]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["category", "i_auroc", "p_auroc", "ssim", "psnr"])
            for c in self.categories:
                w.writerow([c.category, f"{c.i_auroc:.6f}", f"{c.p_auroc:.6f}", f"{c.ssim:.6f}", f"{c.psnr:.4f}"])
            w.writerow(["mean", f"{self.image_auroc:.6f}", f"{self.pixel_auroc:.6f}",
                        f"{self.mean_ssim:.6f}", f"{self.mean_psnr:.4f}"])

    def summary(self) -> str:
        return (f"image_auroc={self.image_auroc:.4f} pixel_auroc={self.pixel_auroc:.4f} "
                f"ssim={self.mean_ssim:.4f} psnr={self.mean_psnr:.2f} k_fraction={self.k_fraction}")


def evaluate(scorer: Scorer, dataset, k_fraction: float = 0.001, batch_size: int = 8) -> EvalReport:
    """Per-category I-AUROC (top-k scores) and P-AUROC (pooled pixels).

    SSIM/PSNR compare reconstructions with the inputs on defect-free test
    images; they are NaN when the scorer exposes no reconstruction.
    """
    reports = []
    for name, cat in dataset.categories.items():
        test = cat.test
        if not test:
            raise MetricError(f"category {name!r}: empty test split")
        images = np.stack([s.image for s in test])
        maps, recons = [], []
        for start in range(0, len(images), batch_size):
            m, r = scorer.score(images[start:start + batch_size])
            maps.append(m)
            recons.append(r)
        maps = np.concatenate(maps)
        labels = np.array([s.label for s in test])
        gt = np.stack([s.mask if s.mask is not None else np.zeros((1,) + images.shape[-2:], np.float32)
                       for s in test])
        scores = [image_score_topk(m, k_fraction) for m in maps]
        try:
            i_auc = auroc(scores, labels)
            p_auc = auroc(maps.reshape(-1), gt.reshape(-1) > 0)
        except MetricError as exc:
            raise MetricError(f"category {name!r}: {exc}") from exc
        ssims, psnrs = [], []
        if all(r is not None for r in recons):
            recons = np.concatenate(recons)
            for img, rec, lab in zip(images, recons, labels):
                if lab == 0:
                    ssims.append(ssim(rec, img))
                    psnrs.append(psnr(rec, img))
        reports.append(CategoryReport(
            name, i_auc, p_auc,
            float(np.mean(ssims)) if ssims else float("nan"),
            float(np.mean(psnrs)) if psnrs else float("nan"),
            [float(s) for s in scores], [int(l) for l in labels], [s.path or "" for s in test]))
    return EvalReport(k_fraction, reports)

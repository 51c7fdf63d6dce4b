"""Cross-recursion detection: a 3D conv encoder-decoder over [I, I_D^n1, I_D^n2, ...].

The depth axis of the volume is the recursion index. Spatial resolution is
halved at each of three downsamplings (depth is never strided), restored by
transposed convolutions with skip concatenations, then the depth axis is
averaged and a 1x1 conv + sigmoid produces the pixel anomaly map.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import augment
from .config import PipelineConfig
from .dpn import DpnModel, dpn_forward
from .evalmetrics import image_score_topk
from .rcae import LogFn, RcaeModel, _check_dataset, iterate_batches
from .tensorcore import (
    Adam, ConvNd, ConvTransposeNd, DimensionError, Module, Tensor, UsageError, add, as_tensor,
    concat, l2_loss, leaky_relu, mean, no_grad, sigmoid, spatial_gradient, stack,
)


class CrdModel(Module):
    def __init__(self, channels: int = 3, depth: int = 6, widths: Sequence[int] = (8, 16, 32, 64),
                 rng: Optional[np.random.Generator] = None, slope: float = 0.01, prior: float = 0.5):
        rng = rng if rng is not None else np.random.default_rng(0)
        if not 0.0 < prior < 1.0:
            raise ValueError(f"prior must be in (0, 1), got {prior}")
        w1, w2, w3, w4 = widths
        self.channels = channels
        self.depth = depth
        self.slope = slope
        down = dict(stride=(1, 2, 2), padding=1, nd=3)
        self.enc = [
            ConvNd(channels, w1, 3, rng, padding=1, nd=3),
            ConvNd(w1, w2, 3, rng, **down),
            ConvNd(w2, w3, 3, rng, **down),
            ConvNd(w3, w4, 3, rng, **down),
        ]
        self.up = [
            ConvTransposeNd(w4, w3, (1, 2, 2), rng, stride=(1, 2, 2), nd=3),
            ConvTransposeNd(w3, w2, (1, 2, 2), rng, stride=(1, 2, 2), nd=3),
            ConvTransposeNd(w2, w1, (1, 2, 2), rng, stride=(1, 2, 2), nd=3),
        ]
        self.dec = [
            ConvNd(2 * w3, w3, 3, rng, padding=1, nd=3),
            ConvNd(2 * w2, w2, 3, rng, padding=1, nd=3),
            ConvNd(2 * w1, w1, 3, rng, padding=1, nd=3),
        ]
        self.head = ConvNd(w1, 1, 1, rng, nd=2, linear=True)
        # start the map at the expected anomalous fraction instead of 0.5, so
        # early training is not spent pushing every pixel down
        self.head.bias.data[:] = np.log(prior / (1.0 - prior))

    def forward(self, volume: Tensor) -> Tensor:
        volume = as_tensor(volume)
        if volume.ndim != 5 or volume.shape[1] != self.channels:
            raise DimensionError(f"expected B x {self.channels} x D x H x W volume, got {volume.shape}")
        if volume.shape[2] != self.depth:
            raise DimensionError(f"volume depth {volume.shape[2]} != trained depth {self.depth}")
        h, w = volume.shape[-2:]
        if h % 8 or w % 8:
            raise DimensionError(f"spatial size {h}x{w} must be divisible by 8")
        act = lambda t: leaky_relu(t, self.slope)
        # intensities live in [0, 1]; centring them stops the first layers from
        # being dominated by the mean level, which left training stuck on most seeds
        skips, cur = [], add(volume, -0.5)
        for i, conv in enumerate(self.enc):
            cur = act(conv(cur))
            if i < 3:
                skips.append(cur)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            cur = act(dec(concat([act(up(cur)), skip], axis=1)))
        return sigmoid(self.head(mean(cur, axis=2)))


@dataclass
class AnomalyMap:
    scores: np.ndarray  # 1 x H x W in [0, 1]
    image_score: float


def stack_volume(image, details: Sequence, expected: Optional[int] = None) -> Tensor:
    """Stack along a new depth axis in the fixed order [I, I_D^1, ..., I_D^N]."""
    image = as_tensor(image)
    details = [as_tensor(d) for d in details]
    if expected is not None and len(details) != expected:
        raise DimensionError(f"expected {expected} reconstructions, got {len(details)}")
    if not details:
        raise DimensionError("no reconstructions to stack")
    for d in details:
        if d.shape != image.shape:
            raise DimensionError(f"reconstruction {d.shape} vs image {image.shape}")
    return stack([image] + details, axis=2)


def crd_forward(model: CrdModel, volume, k_fraction: float = 0.001) -> List[AnomalyMap]:
    with no_grad():
        maps = model(volume).data
    return [AnomalyMap(m, image_score_topk(m, k_fraction)) for m in maps]


def crd_loss(pred, target) -> Tensor:
    """Squared-error map term plus squared-error gradient-map term."""
    pred, target = as_tensor(pred), as_tensor(target)
    return add(l2_loss(pred, target), l2_loss(spatial_gradient(pred), spatial_gradient(target)))


def select_steps(details: Sequence, steps: Sequence[int], depth: int) -> list:
    """Restrict a depth-1..N list to the given 1-based recursion steps."""
    if not steps:
        raise DimensionError("step subset must be non-empty")
    for s in steps:
        if not 1 <= s <= depth:
            raise DimensionError(f"step {s} outside [1, {depth}]")
    return [details[s - 1] for s in sorted(steps)]


def detail_trace(rcae: RcaeModel, dpn: DpnModel, images: np.ndarray, depth: int,
                 intermediate: bool = False) -> List[np.ndarray]:
    """Frozen-upstream inference: [I_D^1..I_D^N] for a batch, as arrays."""
    with no_grad():
        x = Tensor(images)
        trace = rcae.run_trace(x, depth, intermediate)
        return [dpn_forward(dpn, r, x)[1].data for r in trace.reconstructions]


def train_stage3(crd: CrdModel, rcae: RcaeModel, dpn: DpnModel, images: np.ndarray,
                 cfg: PipelineConfig, rng: Optional[np.random.Generator] = None,
                 log_fn: LogFn = None) -> CrdModel:
    """Pseudo-anomaly segmentation on top of frozen RcAE + DPN.

    A ``stage3_clean_probability`` fraction of batches is left uncorrupted
    with empty target masks.
    """
    images = _check_dataset(images)
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 3])
    rcae.freeze()
    dpn.freeze()
    steps = cfg.steps
    if crd.depth != len(steps) + 1:
        raise UsageError(f"CRD built for depth {crd.depth}, config feeds {len(steps) + 1}")
    aug_cfg = cfg.augment_config(0.0)
    opt = Adam(crd.parameters(), cfg.lr_stage3, cfg.beta1, cfg.beta2, cfg.eps)
    for epoch in range(cfg.epochs_stage3):
        losses = []
        for idx in iterate_batches(len(images), cfg.batch_size, rng):
            clean = images[idx]
            if rng.random() < cfg.stage3_clean_probability:
                x, masks = clean, np.zeros((len(idx), 1) + clean.shape[-2:], np.float32)
            else:
                pa = [augment.sample(im, rng, aug_cfg) for im in clean]
                x = np.stack([p.corrupted for p in pa])
                masks = np.stack([p.mask for p in pa])
            details = detail_trace(rcae, dpn, x, cfg.depth, cfg.intermediate_trace)
            volume = stack_volume(x, select_steps(details, steps, cfg.depth))
            loss = crd_loss(crd(volume), masks)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        if log_fn is not None:
            log_fn(3, epoch, float(np.mean(losses)))
    return crd

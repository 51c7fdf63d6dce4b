"""Recursive convolutional autoencoder.

One encoder block (4-layer conv unit + stride-2 downsampling conv) and one
decoder block (4-layer conv unit + stride-2 transposed conv) are applied
repeatedly. Depth-n reconstruction = n encoder applications followed by n
decoder applications, so parameter count does not depend on depth.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import augment
from .config import PipelineConfig
from .tensorcore import (
    Adam, ConvNd, ConvTransposeNd, DimensionError, Module, Tensor, UsageError, add, concat,
    l1_loss, leaky_relu, no_grad, sigmoid, spatial_gradient, upsample_nearest,
)

log = logging.getLogger(__name__)


class ConvUnit(Module):
    """Four 3x3 convs, width plan cin -> W -> W -> W -> cout.

    With ``skips`` the first layer's features are concatenated onto the input
    of the fourth layer (the 2->3 pairing is the unit's main path). The three
    hidden layers are leaky-ReLU activated; the C-channel output is linear
    unless ``final_activation`` is set, since squashing a 3-channel bottleneck
    through a leaky ReLU throws away half its range.
    """

    def __init__(self, cin: int, hidden: int, cout: int, rng: np.random.Generator,
                 skips: bool = True, slope: float = 0.01, final_activation: bool = False):
        self.skips = skips
        self.slope = slope
        self.final_activation = final_activation
        self.layers = [
            ConvNd(cin, hidden, 3, rng, padding=1),
            ConvNd(hidden, hidden, 3, rng, padding=1),
            ConvNd(hidden, hidden, 3, rng, padding=1),
            ConvNd(hidden * (2 if skips else 1), cout, 3, rng, padding=1, linear=not final_activation),
        ]

    def forward(self, x: Tensor) -> Tensor:
        act = lambda t: leaky_relu(t, self.slope)
        h1 = act(self.layers[0](x))
        h2 = act(self.layers[1](h1))
        h3 = act(self.layers[2](h2))
        h4 = self.layers[3](concat([h3, h1], axis=1) if self.skips else h3)
        return act(h4) if self.final_activation else h4


class EncoderBlock(Module):
    def __init__(self, channels, hidden, rng, skips=True, slope=0.01):
        self.unit = ConvUnit(channels, hidden, channels, rng, skips, slope)
        self.down = ConvNd(channels, channels, 2, rng, stride=2, linear=True)

    def forward(self, x):
        return self.down(self.unit(x))


class DecoderBlock(Module):
    def __init__(self, channels, hidden, rng, skips=True, slope=0.01):
        self.unit = ConvUnit(channels, hidden, channels, rng, skips, slope)
        self.up = ConvTransposeNd(channels, channels, 2, rng, stride=2, linear=True)

    def forward(self, x):
        return self.up(self.unit(x))


@dataclass
class RecursionTrace:
    codes: List[Tensor]
    reconstructions: List[Tensor]

    @property
    def depth(self) -> int:
        return len(self.reconstructions)


class RcaeModel(Module):
    """Shared-weight recursive autoencoder.

    ``share_weights=False`` gives every resolution level its own encoder and
    decoder (the unshared ablation); ``cross_skips`` adds each compression
    code onto the decoder stream when it passes the same resolution.
    """

    def __init__(self, channels: int = 3, hidden_width: int = 32, max_depth: int = 5,
                 rng: Optional[np.random.Generator] = None, share_weights: bool = True,
                 cross_skips: bool = False, unit_skips: bool = True, slope: float = 0.01):
        if max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {max_depth}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.hidden_width = hidden_width
        self.max_depth = max_depth
        self.share_weights = share_weights
        self.cross_skips = cross_skips
        nblocks = 1 if share_weights else max_depth
        self.encoders = [EncoderBlock(channels, hidden_width, rng, unit_skips, slope) for _ in range(nblocks)]
        self.decoders = [DecoderBlock(channels, hidden_width, rng, unit_skips, slope) for _ in range(nblocks)]

    def _encoder(self, level: int) -> EncoderBlock:
        # level: resolution level of the block's output (1 = H/2)
        return self.encoders[0 if self.share_weights else level - 1]

    def _decoder(self, level: int) -> DecoderBlock:
        # level: resolution level of the block's input
        return self.decoders[0 if self.share_weights else level - 1]

    def _check_depth(self, n: int) -> None:
        if not 1 <= n <= self.max_depth:
            raise DimensionError(f"depth {n} outside [1, {self.max_depth}]")

    def compress(self, x: Tensor, n: int) -> List[Tensor]:
        """Codes I_C^1..I_C^n, code i at H/2^i x W/2^i."""
        self._check_depth(n)
        h, w = x.shape[-2:]
        if h % (2 ** n) or w % (2 ** n):
            raise DimensionError(f"{h}x{w} is not divisible by 2^{n}")
        if x.shape[1] != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {x.shape[1]}")
        codes, cur = [], x
        for i in range(1, n + 1):
            cur = self._encoder(i)(cur)
            codes.append(cur)
        return codes

    def reconstruct(self, code: Tensor, n: int, out_hw: Optional[tuple] = None,
                    codes: Optional[List[Tensor]] = None, keep_steps: bool = False):
        """Apply the decoder n times from a level-n code.

        The outermost output goes through a sigmoid. With ``keep_steps`` the
        list of every decoder output (last one sigmoided) is returned instead.
        """
        self._check_depth(n)
        if out_hw is not None and tuple(s * 2 ** n for s in code.shape[-2:]) != tuple(out_hw):
            raise DimensionError(f"code {code.shape[-2:]} doubled {n} times does not reach {out_hw}")
        cur, steps = code, []
        for j in range(1, n + 1):
            level = n - j + 1
            if self.cross_skips and codes is not None and j > 1:
                cur = add(cur, codes[level - 1])
            cur = self._decoder(level)(cur)
            steps.append(cur)
        steps[-1] = sigmoid(steps[-1])
        return steps if keep_steps else steps[-1]

    def forward(self, x: Tensor, n: Optional[int] = None) -> Tensor:
        """Depth-n reconstruction R_n (full resolution)."""
        n = self.max_depth if n is None else n
        codes = self.compress(x, n)
        return self.reconstruct(codes[-1], n, x.shape[-2:], codes=codes)

    def run_trace(self, x: Tensor, depth: Optional[int] = None, intermediate: bool = False) -> RecursionTrace:
        """Reconstructions R_1..R_N; the compression prefix is shared by all of them.

        With ``intermediate`` the decoder states of the single depth-N pass
        are used instead, sigmoided and nearest-upsampled to full resolution.
        """
        depth = self.max_depth if depth is None else depth
        codes = self.compress(x, depth)
        if intermediate:
            steps = self.reconstruct(codes[-1], depth, x.shape[-2:], codes=codes, keep_steps=True)
            recs = []
            for j, s in enumerate(steps, start=1):
                img = s if j == depth else sigmoid(s)
                recs.append(upsample_nearest(img, 2 ** (depth - j)))
            return RecursionTrace(codes, recs)
        recs = [self.reconstruct(codes[n - 1], n, x.shape[-2:], codes=codes[:n]) for n in range(1, depth + 1)]
        return RecursionTrace(codes, recs)


class ConvAE(RcaeModel):
    """Plain deep autoencoder baseline: distinct blocks per level, fixed depth, no skips."""

    def __init__(self, channels=3, hidden_width=32, depth=5, rng=None, slope=0.01):
        super().__init__(channels, hidden_width, depth, rng, share_weights=False,
                         cross_skips=False, unit_skips=False, slope=slope)

    def forward(self, x: Tensor, n: Optional[int] = None) -> Tensor:
        return super().forward(x, self.max_depth)


def build_convae_baseline(channels: int = 3, hidden_width: int = 32, depth: int = 5,
                          rng: Optional[np.random.Generator] = None) -> ConvAE:
    return ConvAE(channels, hidden_width, depth, rng)


def rcae_loss(image, recon) -> Tensor:
    """Intensity L1 plus gradient-map L1."""
    return add(l1_loss(image, recon), l1_loss(spatial_gradient(image), spatial_gradient(recon)))


def sample_depth(rng: np.random.Generator, max_depth: int) -> int:
    return int(rng.integers(1, max_depth + 1))


def iterate_batches(n_items: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n_items)
    for start in range(0, n_items, batch_size):
        yield order[start:start + batch_size]


def _check_dataset(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0:
        raise UsageError(f"training needs a non-empty B x C x H x W image array, got shape {images.shape}")
    return images


LogFn = Optional[Callable[[int, int, float], None]]


def train_stage1(model: RcaeModel, images: np.ndarray, cfg: PipelineConfig,
                 rng: Optional[np.random.Generator] = None, log_fn: LogFn = None) -> RcaeModel:
    """Denoising training at a random depth per batch.

    Each batch is corrupted with pseudo anomalies, reconstructed at a depth
    drawn uniformly from [1, N], and pulled toward the clean images.
    """
    images = _check_dataset(images)
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 1])
    aug_cfg = cfg.augment_config(cfg.stage1_clean_probability)
    opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    for epoch in range(cfg.epochs_stage1):
        losses = []
        for idx in iterate_batches(len(images), cfg.batch_size, rng):
            clean = images[idx]
            n = sample_depth(rng, cfg.depth)
            if cfg.stage1_augment:
                noisy = np.stack([augment.sample(im, rng, aug_cfg).corrupted for im in clean])
            else:
                noisy = clean
            loss = rcae_loss(Tensor(clean), model(Tensor(noisy), n))
            loss.backward()
            opt.step()
            losses.append(loss.item())
        if log_fn is not None:
            log_fn(1, epoch, float(np.mean(losses)))
    return model


def train_convae(model: ConvAE, images: np.ndarray, cfg: PipelineConfig,
                 rng: Optional[np.random.Generator] = None, log_fn: LogFn = None) -> ConvAE:
    """Baseline recipe: plain L1 reconstruction of clean normals, no corruption."""
    images = _check_dataset(images)
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 11])
    opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    for epoch in range(cfg.epochs_stage1):
        losses = []
        for idx in iterate_batches(len(images), cfg.batch_size, rng):
            x = Tensor(images[idx])
            loss = l1_loss(x, model(x))
            loss.backward()
            opt.step()
            losses.append(loss.item())
        if log_fn is not None:
            log_fn(0, epoch, float(np.mean(losses)))
    return model


def reconstruct_numpy(model: RcaeModel, images: np.ndarray, depth: Optional[int] = None,
                      batch_size: int = 8) -> np.ndarray:
    """Inference helper: depth-n reconstructions as a float32 array."""
    out = []
    with no_grad():
        for s in range(0, len(images), batch_size):
            out.append(model(Tensor(images[s:s + batch_size]), depth).data)
    return np.concatenate(out)

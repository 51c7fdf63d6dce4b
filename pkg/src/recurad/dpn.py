"""Detail preservation network: predicts a residual that restores texture lost in R_n."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .config import PipelineConfig
from .rcae import ConvUnit, LogFn, RcaeModel, _check_dataset, iterate_batches, sample_depth
from .tensorcore import (
    Adam, DimensionError, Module, Tensor, add, as_tensor, clip, concat, l1_loss, no_grad,
    spatial_gradient,
)


class DpnModel(Module):
    """One 4-layer conv unit with skips, 2C -> C, shared by every recursion depth."""

    def __init__(self, channels: int = 3, hidden_width: int = 32,
                 rng: Optional[np.random.Generator] = None, slope: float = 0.01):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.net = ConvUnit(2 * channels, hidden_width, channels, rng, skips=True, slope=slope,
                            final_activation=False)

    def forward(self, recon: Tensor, image: Tensor) -> Tensor:
        return self.net(concat([recon, spatial_gradient(image)], axis=1))


def dpn_forward(model: DpnModel, recon, image) -> Tuple[Tensor, Tensor]:
    """Returns (residual, detail-enhanced reconstruction clamped to [0, 1])."""
    recon, image = as_tensor(recon), as_tensor(image)
    if recon.shape != image.shape:
        raise DimensionError(f"reconstruction {recon.shape} vs image {image.shape}")
    if recon.shape[1] != model.channels:
        raise DimensionError(f"expected {model.channels} channels, got {recon.shape[1]}")
    res = model(recon, image)
    return res, clip(add(recon, res), 0.0, 1.0)


def dpn_loss(res, recon, image) -> Tensor:
    restored = add(res, recon)
    return add(l1_loss(restored, image), l1_loss(spatial_gradient(restored), spatial_gradient(image)))


def train_stage2(dpn: DpnModel, rcae: RcaeModel, images: np.ndarray, cfg: PipelineConfig,
                 rng: Optional[np.random.Generator] = None, log_fn: LogFn = None) -> DpnModel:
    """Fit the residual predictor on clean normals with the autoencoder frozen.

    One depth n is drawn per batch. Reconstructions of the clean training set
    are computed once up front since the frozen autoencoder makes them fixed.
    """
    images = _check_dataset(images)
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 2])
    rcae.freeze()
    with no_grad():
        cache = [[] for _ in range(cfg.depth)]
        for s in range(0, len(images), 8):
            trace = rcae.run_trace(Tensor(images[s:s + 8]), cfg.depth, cfg.intermediate_trace)
            for n, r in enumerate(trace.reconstructions):
                cache[n].append(r.data)
        cache = [np.concatenate(c) for c in cache]
    opt = Adam(dpn.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    for epoch in range(cfg.epochs_stage2):
        losses = []
        for idx in iterate_batches(len(images), cfg.batch_size, rng):
            n = sample_depth(rng, cfg.depth)
            recon, image = Tensor(cache[n - 1][idx]), Tensor(images[idx])
            res = dpn(recon, image)
            loss = dpn_loss(res, recon, image)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        if log_fn is not None:
            log_fn(2, epoch, float(np.mean(losses)))
    return dpn

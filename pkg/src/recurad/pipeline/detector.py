"""Assembled inference: RcAE trace -> DPN per step -> CRD map, plus ablation scorers."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..config import PipelineConfig
from ..crd import AnomalyMap, CrdModel, detail_trace, select_steps, stack_volume
from ..dpn import DpnModel, dpn_forward
from ..evalmetrics import image_score_topk
from ..rcae import RcaeModel
from ..tensorcore import Tensor, no_grad

MODES = ("full", "rcae", "dpn")


def residual_map(image: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Channel-mean absolute difference, B x 1 x H x W."""
    return np.abs(image - recon).mean(axis=1, keepdims=True)


class Detector:
    """Scores images with one of three heads.

    ``full``: CRD map. ``rcae``: residual against R_N. ``dpn``: residual
    against I_D^N. The reconstruction returned alongside the map is the one
    the mode is built on (I_D^N for ``full``).
    """

    def __init__(self, config: PipelineConfig, rcae: RcaeModel, dpn: Optional[DpnModel] = None,
                 crd: Optional[CrdModel] = None, mode: str = "full"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.config, self.rcae, self.dpn, self.crd, self.mode = config, rcae, dpn, crd, mode

    def with_mode(self, mode: str) -> "Detector":
        return Detector(self.config, self.rcae, self.dpn, self.crd, mode)

    def score(self, images: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        images = np.asarray(images, dtype=np.float32)
        if self.mode == "rcae":
            with no_grad():
                recon = self.rcae(Tensor(images), cfg.depth).data
            return residual_map(images, recon), recon
        if self.dpn is None:
            raise ValueError("detector has no detail network")
        details = detail_trace(self.rcae, self.dpn, images, cfg.depth, cfg.intermediate_trace)
        if self.mode == "dpn":
            return residual_map(images, details[-1]), details[-1]
        if self.crd is None:
            raise ValueError("detector has no cross-recursion network")
        volume = stack_volume(images, select_steps(details, cfg.steps, cfg.depth))
        with no_grad():
            maps = self.crd(volume).data
        return maps, details[-1]

    def anomaly_maps(self, images: np.ndarray):
        maps, _ = self.score(images)
        return [AnomalyMap(m, image_score_topk(m, self.config.k_fraction)) for m in maps]


class BaselineScorer:
    """Residual scorer for the plain autoencoder baseline."""

    def __init__(self, model, batch_size: int = 8):
        self.model = model

    def score(self, images: np.ndarray):
        with no_grad():
            recon = self.model(Tensor(np.asarray(images, dtype=np.float32))).data
        return residual_map(images, recon), recon

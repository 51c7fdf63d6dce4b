"""Three-stage training with per-stage checkpoints, resume, and freeze verification."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import dataio
from ..config import PipelineConfig
from ..crd import CrdModel, train_stage3
from ..dpn import DpnModel, train_stage2
from ..rcae import RcaeModel, train_stage1
from .checkpoint import Checkpoint
from .detector import Detector

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


@dataclass
class Models:
    rcae: RcaeModel
    dpn: DpnModel
    crd: CrdModel

    def params(self) -> dict:
        out = {}
        for prefix, m in (("rcae", self.rcae), ("dpn", self.dpn), ("crd", self.crd)):
            out.update({f"{prefix}.{k}": v for k, v in m.state_dict().items()})
        return out

    def load(self, ckpt: Checkpoint) -> None:
        self.rcae.load_state_dict(ckpt.group("rcae"))
        self.dpn.load_state_dict(ckpt.group("dpn"))
        self.crd.load_state_dict(ckpt.group("crd"))


def build_models(cfg: PipelineConfig) -> Models:
    """Freshly initialised models; each has its own seeded stream so init is order-independent."""
    rcae = RcaeModel(cfg.channels, cfg.hidden_width, cfg.depth, np.random.default_rng([cfg.seed, 101]),
                     share_weights=cfg.share_weights, cross_skips=cfg.cross_phase_skips, slope=cfg.slope)
    dpn = DpnModel(cfg.channels, cfg.hidden_width, np.random.default_rng([cfg.seed, 102]), cfg.slope)
    crd = CrdModel(cfg.channels, len(cfg.steps) + 1, cfg.crd_widths,
                   np.random.default_rng([cfg.seed, 103]), cfg.slope, cfg.crd_prior)
    return Models(rcae, dpn, crd)


def synth_spec(cfg: PipelineConfig) -> dataio.SynthSpec:
    return dataio.SynthSpec(
        textures=tuple(cfg.synth_textures), resolution=cfg.resolution,
        train_count=cfg.synth_train_count, test_count=cfg.synth_test_count, seed=cfg.seed,
        period=cfg.synth_period, noise=cfg.synth_noise, augment=cfg.augment_config())


def resolve_dataset(cfg: PipelineConfig) -> dataio.DatasetIndex:
    if cfg.data == "synthetic":
        return dataio.generate_synthetic(synth_spec(cfg))
    return dataio.load_dataset(cfg.data, cfg.resolution, cfg.categories or None, cfg.channels)


def stage_path(out_dir, stage: int) -> Path:
    return Path(out_dir) / f"stage{stage}.ckpt"


def latest_checkpoint(out_dir) -> Optional[Path]:
    for stage in (3, 2, 1):
        p = stage_path(out_dir, stage)
        if p.exists():
            return p
    return None


def detector_from_checkpoint(ckpt: Checkpoint, mode: str = "full") -> Detector:
    models = build_models(ckpt.config)
    models.load(ckpt)
    for m in (models.rcae, models.dpn, models.crd):
        m.freeze()
    return Detector(ckpt.config, models.rcae, models.dpn, models.crd, mode)


def run_training(cfg: PipelineConfig, out_dir=None, dataset: Optional[dataio.DatasetIndex] = None,
                 resume: bool = True, stop_after: int = 3,
                 log_fn: Optional[Callable[[int, int, float], None]] = None) -> Checkpoint:
    """Stage 1 (RcAE) -> stage 2 (DPN, RcAE frozen) -> stage 3 (CRD, both frozen).

    With ``out_dir`` a checkpoint is written after every stage and, if
    ``resume``, training restarts after the latest completed stage found there.
    """
    cfg = cfg.validate()
    if dataset is None:
        try:
            dataset = resolve_dataset(cfg)
        except (dataio.DatasetIndexError, dataio.DecodeError) as exc:
            raise StageError(f"stage 1: cannot load training data: {exc}") from exc
    images = dataset.train_array()
    models = build_models(cfg)
    done = 0
    rng_state = None
    logfile = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        logfile = open(Path(out_dir) / "train.log", "a")
        if resume and (p := latest_checkpoint(out_dir)) is not None:
            ckpt = Checkpoint.load(p)
            if ckpt.config != cfg:
                raise StageError(f"{p} was trained with a different config; refusing to resume")
            models.load(ckpt)
            done, rng_state = ckpt.stage, ckpt.rng_state
            log.info("resuming after stage %d from %s", done, p)

    def emit(stage, epoch, loss):
        line = f"stage={stage} epoch={epoch} loss={loss:.6f}"
        log.info(line)
        if logfile is not None:
            logfile.write(line + "\n")
            logfile.flush()
        if log_fn is not None:
            log_fn(stage, epoch, loss)

    stages = {
        1: lambda rng: train_stage1(models.rcae, images, cfg, rng, emit),
        2: lambda rng: train_stage2(models.dpn, models.rcae, images, cfg, rng, emit),
        3: lambda rng: train_stage3(models.crd, models.rcae, models.dpn, images, cfg, rng, emit),
    }
    upstream = {1: (), 2: ("rcae",), 3: ("rcae", "dpn")}
    try:
        for stage in range(done + 1, min(stop_after, 3) + 1):
            frozen = {name: getattr(models, name).param_hash() for name in upstream[stage]}
            rng = np.random.default_rng([cfg.seed, stage])
            stages[stage](rng)
            for name, h in frozen.items():
                if getattr(models, name).param_hash() != h:
                    raise StageError(f"stage {stage} modified frozen {name} parameters")
            done, rng_state = stage, rng.bit_generator.state
            if out_dir is not None:
                Checkpoint(cfg, done, models.params(), rng_state).save(stage_path(out_dir, stage))
    finally:
        if logfile is not None:
            logfile.close()
    return Checkpoint(cfg, done, models.params(), rng_state)

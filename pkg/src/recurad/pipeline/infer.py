"""Batch inference from a stage-3 checkpoint: maps to 16-bit PNGs, scores to CSV."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .. import dataio
from ..crd import AnomalyMap
from ..tensorcore import UsageError
from .checkpoint import Checkpoint
from .train import detector_from_checkpoint


@dataclass
class InferenceResult:
    name: str
    anomaly: AnomalyMap
    label: Optional[int] = None

    @property
    def image_score(self) -> float:
        return self.anomaly.image_score


def _as_images(images, resolution: int, channels: int):
    """Accepts paths, Samples or C x H x W arrays; returns (names, stacked array, labels)."""
    names, arrays, labels = [], [], []
    for i, item in enumerate(images):
        if isinstance(item, (str, Path)):
            names.append(str(item))
            arrays.append(dataio.read_image(item, resolution, channels))
            labels.append(None)
        elif isinstance(item, dataio.Sample):
            names.append(item.path or f"image_{i:04d}")
            arrays.append(item.image)
            labels.append(item.label)
        else:
            arr = np.asarray(item, dtype=np.float32)
            if arr.shape[-2:] != (resolution, resolution):
                raise dataio.DecodeError(
                    f"array input {i} is {arr.shape[-2:]}, expected {resolution}x{resolution}; "
                    "pass a file path to have it resized")
            names.append(f"image_{i:04d}")
            arrays.append(arr)
            labels.append(None)
    return names, np.stack(arrays).astype(np.float32), labels


def run_inference(checkpoint: Union[Checkpoint, str, Path], images: Sequence,
                  out_dir=None, batch_size: int = 1) -> List[InferenceResult]:
    """Score every image with the full pipeline; results keep the input order.

    BLAS may round differently for different batch shapes, so the default of
    one image per call is what makes a map depend only on its own image.

    With ``out_dir`` each map is written as ``<index>_<stem>.png`` and a
    ``scores.csv`` (path,image_score,label) is written beside them.
    """
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    if ckpt.stage < 3:
        raise UsageError(f"checkpoint only completed stage {ckpt.stage}; inference needs stage 3")
    cfg = ckpt.config
    detector = detector_from_checkpoint(ckpt, "full")
    names, arr, labels = _as_images(images, cfg.resolution, cfg.channels)
    results = []
    for start in range(0, len(arr), batch_size):
        maps = detector.anomaly_maps(arr[start:start + batch_size])
        for j, amap in enumerate(maps):
            k = start + j
            results.append(InferenceResult(names[k], amap, labels[k]))
    if out_dir is not None:
        write_results(results, out_dir)
    return results


def write_results(results: Sequence[InferenceResult], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(results):
        dataio.save_map(r.anomaly.scores, out / f"{i:04d}_{Path(r.name).stem}.png")
    path = out / "scores.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "image_score", "label"])
        for r in results:
            w.writerow([r.name, f"{r.image_score:.8f}", "" if r.label is None else r.label])
    return path

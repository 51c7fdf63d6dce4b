"""Checkpoint files: a JSON header describing every tensor, then raw little-endian float32.

    b"RCAECKPT" | u32 version | u64 header length | header JSON | payload
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from ..config import PipelineConfig

MAGIC = b"RCAECKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: PipelineConfig
    stage: int
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Optional[dict] = None

    def group(self, prefix: str) -> Dict[str, np.ndarray]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.params.items() if k.startswith(p)}

    def to_bytes(self) -> bytes:
        tensors, blobs, offset = [], [], 0
        for name in self.params:
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
            blobs.append(arr.tobytes())
            offset += arr.size
        header = {
            "format_version": FORMAT_VERSION,
            "stage": self.stage,
            "config": self.config.to_text(),
            "rng_state": self.rng_state,
            "dtype": "float32-le",
            "tensors": tensors,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:8] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack("<IQ", raw[8:20])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(raw[20:20 + hlen].decode("utf-8"))
        payload = np.frombuffer(raw, dtype="<f4", offset=20 + hlen)
        params = {}
        for t in header["tensors"]:
            chunk = payload[t["offset"]:t["offset"] + t["count"]]
            if chunk.size != t["count"]:
                raise CheckpointError(f"truncated payload for {t['name']}")
            params[t["name"]] = chunk.reshape(t["shape"]).astype(np.float32)
        config = PipelineConfig.from_text(header["config"])
        return cls(config, int(header["stage"]), params, header.get("rng_state"))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

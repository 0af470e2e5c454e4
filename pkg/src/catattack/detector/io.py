"""Model archive: a single ``.npz`` holding every parameter array plus a JSON
``__meta__`` entry (format version, seed, architecture, parameter shapes)."""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import torch

from catattack.detector.model import KeypointDetector, ToyCenterNet
from catattack.errors import ModelFormatError

FORMAT_VERSION = 1
META_KEY = "__meta__"


def save_model(model: KeypointDetector, path) -> Path:
    path = Path(path)
    arrays = model.state_arrays()
    meta = {
        "format_version": FORMAT_VERSION,
        "architecture": "ToyCenterNet",
        "num_classes": model.num_classes,
        "stride": model.stride,
        "channels": list(model.net.channels),
        "seed": model.seed,
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "training": model.meta,
    }
    payload = dict(arrays)
    payload[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())
    return path


def read_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        if META_KEY not in data:
            raise ModelFormatError(f"{path}: missing {META_KEY}")
        return json.loads(bytes(data[META_KEY]).decode())


def load_model(path) -> KeypointDetector:
    with np.load(path, allow_pickle=False) as data:
        if META_KEY not in data:
            raise ModelFormatError(f"{path}: missing {META_KEY}")
        meta = json.loads(bytes(data[META_KEY]).decode())
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported format_version {version!r}")
        if meta.get("architecture") != "ToyCenterNet":
            raise ModelFormatError(f"{path}: unknown architecture {meta.get('architecture')!r}")
        net = ToyCenterNet(meta["num_classes"], tuple(meta["channels"]))
        state = {}
        for name, shape in meta["shapes"].items():
            arr = data[name]
            if list(arr.shape) != shape:
                raise ModelFormatError(f"{path}: {name} has shape {arr.shape}, expected {shape}")
            state[name] = torch.from_numpy(arr.copy())
    net.load_state_dict(state)
    return KeypointDetector(net, seed=meta.get("seed"), meta=meta.get("training"))

"""Binary checkpoint: magic line, one-line JSON header, float64 LE blob."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import DeGTAConfig, DeGTAModel

MAGIC = b"DEGTA1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: DeGTAModel, path, extra=None):
    manifest = []
    offset = 0
    blobs = []
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.values, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(p.values.shape), "offset": offset, "nbytes": len(raw)})
        offset += len(raw)
        blobs.append(raw)
    header = {
        "config": model.config.to_dict(),
        "model": {"in_dim": model.in_dim, "num_outputs": model.num_outputs, "task": model.task,
                  "regression": model.regression},
        "manifest": manifest,
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for raw in blobs:
            f.write(raw)


def read_header(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a DeGTA checkpoint (bad magic)")
    end = data.index(b"\n", len(MAGIC))
    header = json.loads(data[len(MAGIC):end].decode("utf-8"))
    return header, data[end + 1:]


def load_checkpoint(path) -> DeGTAModel:
    header, blob = read_header(path)
    config = DeGTAConfig.from_dict(header["config"])
    meta = header["model"]
    model = DeGTAModel(config, meta["in_dim"], meta["num_outputs"], meta["task"], meta["regression"])
    params = dict(model.named_parameters())
    if [m["name"] for m in header["manifest"]] != list(params):
        raise CheckpointError(f"{path}: parameter manifest does not match the configured model")
    for entry in header["manifest"]:
        p = params[entry["name"]]
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(blob):
            raise CheckpointError(f"{path}: truncated parameter blob")
        values = np.frombuffer(blob[start:stop], dtype="<f8").reshape(entry["shape"])
        if values.shape != p.values.shape:
            raise CheckpointError(f"{path}: shape mismatch for {entry['name']}")
        p.values = values.astype(np.float64)
    return model

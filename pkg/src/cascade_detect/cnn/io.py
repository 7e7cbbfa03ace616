"""Model files: magic, little-endian u64 header length, JSON header, float32 payload."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import Model, NetworkSpec

MAGIC = b"CDMODEL1"


class ModelFormatError(ValueError):
    pass


def save_model(model: Model, path) -> None:
    tensors = []
    for i, p in enumerate(model.params):
        for name in sorted(p):
            tensors.append({"layer": i, "name": name, "shape": list(p[name].shape)})
    header = {
        "spec": model.spec.to_dict(),
        "keep_prob": model.keep_prob,
        "input_mean": model.input_mean,
        "metadata": model.metadata,
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(model.params[t["layer"]][t["name"]], dtype="<f4").tobytes()
        for t in tensors
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<Q", len(blob)) + blob + payload)


def load_model(path, dtype=np.float32) -> Model:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC or len(raw) < 16:
        raise ModelFormatError(f"{path}: not a model file")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header") from exc
    spec = NetworkSpec.from_dict(header["spec"])
    params = [dict() for _ in spec.layers]
    offset = 16 + n
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        chunk = raw[offset : offset + 4 * count]
        if len(chunk) != 4 * count:
            raise ModelFormatError(f"{path}: truncated payload")
        params[t["layer"]][t["name"]] = (
            np.frombuffer(chunk, dtype="<f4").reshape(t["shape"]).astype(dtype)
        )
        offset += 4 * count
    if offset != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Model(spec, params, header["keep_prob"], header["input_mean"], header["metadata"])

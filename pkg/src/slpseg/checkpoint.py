"""Single-file checkpoint container.

Layout (little-endian): 8-byte magic ``b"SLPSCKP1"``, uint64 manifest length, UTF-8 JSON
manifest, then the raw tensor blobs. The manifest's ``tensors`` list gives each blob's
name, dtype, shape, byte offset (relative to the blob section) and byte count.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SLPSCKP1"
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    arr = t.detach().cpu().numpy()
    name = str(arr.dtype)
    if name not in _DTYPES:
        raise TypeError(f"cannot store tensor of dtype {arr.dtype}")
    return np.ascontiguousarray(arr, dtype=_DTYPES[name])


def save_checkpoint(path: Path, tensors: dict[str, torch.Tensor], meta: dict) -> Path:
    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = _to_numpy(t)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": str(arr.dtype.newbyteorder("=")), "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)
    return path


def load_checkpoint(path: Path) -> tuple[dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<Q", data, 8)
    manifest = json.loads(data[16:16 + n])
    base = 16 + n
    tensors = {}
    for e in manifest["tensors"]:
        dt = np.dtype(_DTYPES[e["dtype"]])
        count = e["nbytes"] // dt.itemsize
        arr = np.frombuffer(data, dtype=dt, count=count, offset=base + e["offset"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(dt.newbyteorder("="), copy=True))
    return tensors, manifest["meta"]


def optimizer_to_flat(state: dict) -> tuple[dict[str, torch.Tensor], dict]:
    """Split an optimizer ``state_dict`` into named tensors and JSON-able remainder."""
    tensors, scalars = {}, {}
    for idx, st in state["state"].items():
        for key, value in st.items():
            if torch.is_tensor(value):
                tensors[f"optim/{idx}/{key}"] = value
            else:
                scalars[f"{idx}/{key}"] = value
    return tensors, {"param_groups": state["param_groups"], "scalars": scalars}


def optimizer_from_flat(tensors: dict[str, torch.Tensor], extra: dict) -> dict:
    state: dict = {}
    for name, t in tensors.items():
        if not name.startswith("optim/"):
            continue
        _, idx, key = name.split("/", 2)
        state.setdefault(int(idx), {})[key] = t
    for name, value in extra.get("scalars", {}).items():
        idx, key = name.split("/", 1)
        state.setdefault(int(idx), {})[key] = value
    return {"state": state, "param_groups": extra["param_groups"]}

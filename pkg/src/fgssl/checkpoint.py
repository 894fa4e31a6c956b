"""Checkpoint archive: named little-endian float32 arrays + JSON metadata.

A checkpoint is a zip file holding one `arrays/<name>.npy` member per
tensor (always little-endian float32) and a `metadata.json` block with
the format version, step counter, config hash, the full resolved config,
and all integer state (ring cursors, fill counts, batchnorm step
counters). Writes are atomic: temp file then rename.
"""

import io
import json
import os
import tempfile
import zipfile

import numpy as np
import torch

FORMAT_VERSION = 1


def _to_f32(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().numpy().astype("<f4"))


def save_archive(path: str, arrays: dict, metadata: dict) -> None:
    metadata = dict(metadata)
    metadata["format_version"] = FORMAT_VERSION
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                                        suffix=".ckpt.tmp")
    os.close(tmp_fd)
    try:
        with zipfile.ZipFile(tmp_path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            for name, tensor in sorted(arrays.items()):
                buf = io.BytesIO()
                np.save(buf, _to_f32(tensor))
                zf.writestr(f"arrays/{name}.npy", buf.getvalue())
            zf.writestr("metadata.json", json.dumps(metadata, indent=2, sort_keys=True))
        os.replace(tmp_path, path)
    finally:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)


def load_archive(path: str):
    """Returns (arrays: name -> float32 torch tensor, metadata: dict)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        metadata = json.loads(zf.read("metadata.json"))
        if metadata.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format: {metadata.get('format_version')}")
        for member in zf.namelist():
            if member.startswith("arrays/") and member.endswith(".npy"):
                arr = np.load(io.BytesIO(zf.read(member)))
                arrays[member[len("arrays/"):-len(".npy")]] = torch.from_numpy(arr.copy())
    return arrays, metadata


def module_arrays(module: torch.nn.Module, prefix: str):
    """Split a state dict into float arrays and integer scalars (by name)."""
    floats, ints = {}, {}
    for name, tensor in module.state_dict().items():
        key = f"{prefix}.{name}"
        if tensor.dtype in (torch.int64, torch.int32, torch.long):
            ints[key] = int(tensor.item()) if tensor.numel() == 1 else tensor.tolist()
        else:
            floats[key] = tensor
    return floats, ints


def load_module_arrays(module: torch.nn.Module, prefix: str, arrays: dict, ints: dict) -> None:
    state = {}
    for name, tensor in module.state_dict().items():
        key = f"{prefix}.{name}"
        if tensor.dtype in (torch.int64, torch.int32, torch.long):
            val = ints.get(key, 0)
            state[name] = torch.tensor(val, dtype=tensor.dtype).reshape(tensor.shape)
        else:
            if key not in arrays:
                raise KeyError(f"checkpoint missing array {key!r}")
            state[name] = arrays[key].to(tensor.dtype).reshape(tensor.shape)
    module.load_state_dict(state)

"""Model checkpoint container: a zip holding manifest.json + tensors.npz."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from srrd.errors import VolumeIOError

FORMAT_VERSION = 1


def save_checkpoint(path, manifest: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    buf = io.BytesIO()
    np.savez(buf, **{k: np.asarray(v) for k, v in tensors.items()})
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        zf.writestr("tensors.npz", buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise VolumeIOError(f"no such checkpoint: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            with np.load(io.BytesIO(zf.read("tensors.npz"))) as npz:
                tensors = {k: npz[k] for k in npz.files}
    except (zipfile.BadZipFile, KeyError) as exc:
        raise VolumeIOError(f"malformed checkpoint {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VolumeIOError(f"{path}: unsupported checkpoint format {manifest.get('format_version')}")
    return manifest, tensors


def state_dict_to_numpy(state_dict) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in state_dict.items()}


def numpy_to_state_dict(tensors: dict[str, np.ndarray]):
    import torch

    return {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in tensors.items()}

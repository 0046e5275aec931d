"""Checkpoint archives.

A checkpoint is a single uncompressed zip holding one ``.npy`` member per
named array plus ``config.json``. Model parameters and batch-norm statistics
are stored as row-major little-endian float32; the focus activation mask is
bit-packed; an optional replay-buffer snapshot keeps its native dtypes
(uint8 images, int64 labels) together with the buffer's rng state so a run
can resume exactly. Zip member timestamps are pinned, so identical state
produces byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _write_member(zf: zipfile.ZipFile, name: str, payload: bytes):
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o600 << 16
    zf.writestr(info, payload)


def _npy_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(array), version=(1, 0))
    return buf.getvalue()


def write_archive(path, arrays: dict, meta: dict):
    """Write named arrays (as .npy members) and JSON metadata members."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key, text in meta.items():
            _write_member(zf, f"{key}.json", text.encode("utf-8"))
        for name, arr in arrays.items():
            _write_member(zf, f"{name}.npy", _npy_bytes(arr))


def read_archive(path):
    """Return (arrays, meta) from an archive written by write_archive."""
    arrays, meta = {}, {}
    with zipfile.ZipFile(path, "r") as zf:
        for name in zf.namelist():
            with zf.open(name) as fh:
                if name.endswith(".json"):
                    meta[name[:-5]] = fh.read().decode("utf-8")
                else:
                    arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(fh.read()))
    return arrays, meta


def save_checkpoint(path, model, buffer=None):
    """Persist model parameters, norm statistics, focus mask, optional buffer."""
    arrays = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.data.astype("<f4")
    for name, b in model.named_buffers():
        arrays[f"stat/{name}"] = np.asarray(b).astype("<f4")
    mask = model.focus_bank.active
    arrays["focus_active_bits"] = np.packbits(mask.astype(np.uint8))
    meta = {"config": model.config.to_json()}
    if buffer is not None:
        for name, arr in buffer.state_arrays().items():
            arrays[name] = arr
        meta["buffer_rng"] = buffer.rng_state()
    write_archive(path, arrays, meta)


def load_checkpoint(path):
    """Rebuild (model, buffer-or-None) from an archive."""
    from .model import CvtConfig, CvtModel
    from .replay import MemoryBuffer

    arrays, meta = read_archive(path)
    config = CvtConfig.from_json(meta["config"])
    model = CvtModel(config, np.random.default_rng(0))
    for name, p in model.named_parameters():
        stored = arrays[f"param/{name}"]
        if stored.shape != p.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
        p.data = stored.astype(np.float64)
    for name, b in model.named_buffers():
        np.copyto(b, arrays[f"stat/{name}"].astype(np.float64))
    bits = np.unpackbits(arrays["focus_active_bits"])[: config.num_classes]
    model.focus_bank.active = bits.astype(bool)
    buffer = None
    if "buffer_meta" in arrays:
        buffer = MemoryBuffer.from_state(arrays, meta["buffer_rng"])
    return model, buffer


def checkpoint_bytes(model, buffer=None) -> bytes:
    """The archive as bytes (used for determinism checks)."""
    import tempfile

    with tempfile.TemporaryDirectory() as td:
        p = Path(td) / "ckpt.zip"
        save_checkpoint(p, model, buffer)
        return p.read_bytes()

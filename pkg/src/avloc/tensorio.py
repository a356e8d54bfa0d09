"""Binary tensor and waveform file formats.

AVIC tensor format, shared by the corpus and the checkpoints:

    magic "AVIC" | u32 version | u32 ndim | ndim x u32 extents | payload

Version 1 stores row-major 32-bit little-endian reals (the corpus format:
storage 32-bit, computation 64-bit).  Version 2 is identical except the
payload is 64-bit, used for parameter checkpoints where a 32-bit round trip
would break bit-exact training resume.

Waveforms are raw 32-bit little-endian samples next to a JSON sidecar
``{"sample_rate": N, "length": M}``.
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = ["save_tensor", "load_tensor", "save_waveform_raw", "load_waveform_raw"]

MAGIC = b"AVIC"

_PAYLOAD_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def save_tensor(path, values: np.ndarray, version: int = 1) -> None:
    """Write an array in AVIC format (version 1 = f32 payload, 2 = f64)."""
    if version not in _PAYLOAD_DTYPES:
        raise ValueError(f"unsupported AVIC version {version}")
    arr = np.asarray(values, dtype=np.float64)
    header = [np.uint32(version), np.uint32(arr.ndim)]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(header, dtype="<u4").tobytes())
        fh.write(np.array(arr.shape, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(arr, dtype=_PAYLOAD_DTYPES[version]).tobytes())


def load_tensor(path) -> np.ndarray:
    """Read an AVIC file back as float64, row-major."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an AVIC tensor (bad magic)")
    version, ndim = np.frombuffer(raw, dtype="<u4", count=2, offset=4)
    if int(version) not in _PAYLOAD_DTYPES:
        raise ValueError(f"{path}: unsupported AVIC version {int(version)}")
    shape = np.frombuffer(raw, dtype="<u4", count=int(ndim), offset=12)
    shape = tuple(int(s) for s in shape)
    dtype = _PAYLOAD_DTYPES[int(version)]
    offset = 12 + 4 * int(ndim)
    count = int(np.prod(shape)) if shape else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size mismatch (file {len(raw)} bytes, header implies {expected})"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.astype(np.float64).reshape(shape)


def save_waveform_raw(path_raw, samples: np.ndarray, sample_rate: int) -> None:
    """Write raw f32-LE samples plus the JSON sidecar next to them."""
    arr = np.ascontiguousarray(np.asarray(samples, dtype=np.float64), dtype="<f4")
    with open(path_raw, "wb") as fh:
        fh.write(arr.tobytes())
    sidecar = os.path.splitext(str(path_raw))[0] + ".json"
    with open(sidecar, "w") as fh:
        json.dump({"sample_rate": int(sample_rate), "length": int(arr.size)}, fh)
        fh.write("\n")


def load_waveform_raw(path_raw):
    """Read (samples: float64 array, sample_rate) written by save_waveform_raw."""
    sidecar = os.path.splitext(str(path_raw))[0] + ".json"
    with open(sidecar) as fh:
        meta = json.load(fh)
    data = np.fromfile(path_raw, dtype="<f4")
    if data.size != int(meta["length"]):
        raise ValueError(
            f"{path_raw}: sample count {data.size} disagrees with sidecar length {meta['length']}"
        )
    return data.astype(np.float64), int(meta["sample_rate"])

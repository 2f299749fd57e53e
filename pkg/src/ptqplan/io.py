"""Binary tensor container and on-disk layouts for models and decompositions.

Container layout (all integers little-endian)::

    b"QDT1" | version u16 | ndim u16 | dims u64 * ndim | dtype u8 | payload

dtype codes: 0 = float32, 1 = float64, 2 = int32. The payload is row-major.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFile, FormatError
from .hsvd import BlockConfig, LocalBranch, QuantizedWeight
from .linalg import SvdFactors
from .quantizer import QuantizedTensor

MAGIC = b"QDT1"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4")}
_CODES = {v: k for k, v in DTYPES.items()}


def encode_tensor(a, dtype=np.float32) -> bytes:
    dt = np.dtype(dtype).newbyteorder("<")
    if dt not in _CODES:
        raise FormatError(f"unsupported dtype {dtype}")
    arr = np.asarray(a, dtype=dt, order="C")
    header = MAGIC + struct.pack("<HH", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    header += struct.pack("<B", _CODES[dt])
    return header + arr.tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not a QDT tensor (bad magic)")
    version, ndim = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} (expected {VERSION})")
    off = 8
    if len(data) < off + 8 * ndim + 1:
        raise CorruptFile("truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    (code,) = struct.unpack_from("<B", data, off)
    off += 1
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dt = DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = count * dt.itemsize
    if len(data) - off != expected:
        raise CorruptFile(f"payload has {len(data) - off} bytes, expected {expected}")
    return np.reshape(np.frombuffer(data, dtype=dt, offset=off), dims).copy()


def write_tensor(a, path, dtype=np.float32) -> None:
    Path(path).write_bytes(encode_tensor(a, dtype))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


# --- QuantizedWeight: one record per branch ---------------------------------


def save_quantized_weight(qw: QuantizedWeight, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "out": qw.out,
        "in": qw.inp,
        "hadamard_size": qw.hadamard_size,
        "rank": qw.rank,
        "weight_bits": qw.weight_bits,
        "step": qw.residual.step,
        "axis": qw.residual.axis,
        "block": None if qw.local is None else [qw.local.config.s_o, qw.local.config.s_i, qw.local.config.budget],
        "warning": qw.warning,
    }
    write_json(meta, d / "meta.json")
    write_tensor(qw.global_factors.left, d / "global_left.qdt", np.float64)
    write_tensor(qw.global_factors.singular_values, d / "global_sigma.qdt", np.float64)
    write_tensor(qw.global_factors.right, d / "global_right.qdt", np.float64)
    if qw.local is not None:
        write_tensor(qw.local.u, d / "local_u.qdt", np.float64)
        write_tensor(qw.local.v, d / "local_v.qdt", np.float64)
        write_tensor(qw.local.sigma, d / "local_sigma.qdt", np.float64)
    write_tensor(qw.residual.codes, d / "residual_codes.qdt", np.int32)
    write_tensor(qw.residual.scales, d / "residual_scales.qdt", np.float64)


def load_quantized_weight(directory) -> QuantizedWeight:
    d = Path(directory)
    meta = read_json(d / "meta.json")
    factors = SvdFactors(
        read_tensor(d / "global_left.qdt"),
        read_tensor(d / "global_sigma.qdt"),
        read_tensor(d / "global_right.qdt"),
    )
    local = None
    if meta["block"] is not None:
        local = LocalBranch(
            BlockConfig(*meta["block"]),
            read_tensor(d / "local_u.qdt"),
            read_tensor(d / "local_v.qdt"),
            read_tensor(d / "local_sigma.qdt"),
        )
    residual = QuantizedTensor(
        read_tensor(d / "residual_codes.qdt"),
        read_tensor(d / "residual_scales.qdt"),
        int(meta["weight_bits"]),
        float(meta["step"]),
        meta["axis"],
    )
    return QuantizedWeight(meta["out"], meta["in"], meta["hadamard_size"], factors, local, residual, meta["warning"])

"""On-disk formats: raw tensor files, checkpoints, flat config files, and the
9-significant-digit CSV number formatting shared by all report writers.

Tensor files: ASCII header `RSD1 f32|f64 <ndim> <d0> <d1> ...\n` followed by
little-endian row-major payload, exactly product-of-dims elements.

Checkpoints: version line, a flat key=value config echo, named tensors in a
deterministic order, and a trailing 64-bit checksum over all preceding bytes.
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .denoiser import NetConfig

__all__ = [
    "TensorFormatError",
    "CheckpointError",
    "ConfigError",
    "write_tensor",
    "read_tensor",
    "save_checkpoint",
    "load_checkpoint",
    "parse_config_text",
    "read_config",
    "write_config",
    "net_config_from_dict",
    "net_config_to_dict",
    "format_g9",
    "write_pgm",
]

_MAGIC = "RSD1"
_CKPT_MAGIC = b"RSDC 1\n"
_DTYPES = {"f32": "<f4", "f64": "<f8"}
_MAX_NDIM = 8
_MAX_ELEMENTS = 2**32


class TensorFormatError(ValueError):
    """Malformed or truncated tensor file."""


class CheckpointError(ValueError):
    """Malformed checkpoint or checksum mismatch."""


class ConfigError(ValueError):
    """Malformed config text."""


def _dtype_token(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise TensorFormatError(f"unsupported dtype {arr.dtype}, expected float32 or float64")


def write_tensor(path, arr) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.ndim < 1 or arr.ndim > _MAX_NDIM:
        raise TensorFormatError(f"ndim {arr.ndim} outside supported range 1..{_MAX_NDIM}")
    token = _dtype_token(arr)
    header = f"{_MAGIC} {token} {arr.ndim} {' '.join(str(d) for d in arr.shape)}\n"
    payload = arr.astype(_DTYPES[token]).tobytes()
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(payload)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(256)
        nl = head.find(b"\n")
        if nl < 0:
            raise TensorFormatError(f"{path}: missing header line")
        try:
            fields = head[:nl].decode("ascii").split()
        except UnicodeDecodeError as e:
            raise TensorFormatError(f"{path}: non-ASCII header") from e
        if len(fields) < 3 or fields[0] != _MAGIC:
            raise TensorFormatError(f"{path}: bad magic or header {fields[:2]}")
        token = fields[1]
        if token not in _DTYPES:
            raise TensorFormatError(f"{path}: unknown dtype token {token!r}")
        try:
            ndim = int(fields[2])
            dims = [int(d) for d in fields[3:]]
        except ValueError as e:
            raise TensorFormatError(f"{path}: non-integer dimension field") from e
        if ndim < 1 or ndim > _MAX_NDIM or len(dims) != ndim:
            raise TensorFormatError(f"{path}: ndim {ndim} does not match {len(dims)} dims")
        if any(d < 1 for d in dims):
            raise TensorFormatError(f"{path}: non-positive dimension in {dims}")
        count = 1
        for d in dims:
            count *= d
        if count > _MAX_ELEMENTS:
            raise TensorFormatError(f"{path}: dimension overflow, {count} elements")
        itemsize = np.dtype(_DTYPES[token]).itemsize
        # read one byte past the expected payload so trailing data is caught
        remaining = max(0, count * itemsize - (len(head) - nl - 1))
        payload = head[nl + 1 :] + f.read(remaining + 1)
    if len(payload) < count * itemsize:
        raise TensorFormatError(
            f"{path}: truncated payload, expected {count * itemsize} bytes, got {len(payload)}"
        )
    if len(payload) > count * itemsize:
        raise TensorFormatError(f"{path}: trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=_DTYPES[token]).reshape(dims)
    return arr.astype(arr.dtype.newbyteorder("="))


# --- checkpoints ---


def net_config_to_dict(config: NetConfig) -> "OrderedDict[str, str]":
    return OrderedDict(
        [
            ("base_channels", str(config.base_channels)),
            ("depth", str(config.depth)),
            ("use_window_attention", str(config.use_window_attention).lower()),
            ("window_size", str(config.window_size)),
            ("heads", str(config.heads)),
            ("time_embed_dim", str(config.time_embed_dim)),
        ]
    )


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected boolean, got {s!r}")


def net_config_from_dict(d: dict) -> NetConfig:
    try:
        return NetConfig(
            base_channels=int(d["base_channels"]),
            depth=int(d["depth"]),
            use_window_attention=_parse_bool(d["use_window_attention"]),
            window_size=int(d["window_size"]),
            heads=int(d["heads"]),
            time_embed_dim=int(d["time_embed_dim"]),
        )
    except KeyError as e:
        raise ConfigError(f"missing network config key {e.args[0]!r}") from e


def save_checkpoint(path, params, net_config: NetConfig, extra: dict | None = None) -> None:
    """Write params plus a config echo; trailing checksum covers every byte."""
    meta = net_config_to_dict(net_config)
    for k, v in (extra or {}).items():
        meta[str(k)] = str(v)
    config_text = "".join(f"{k} = {v}\n" for k, v in meta.items()).encode("utf-8")

    out = bytearray()
    out += _CKPT_MAGIC
    out += struct.pack("<I", len(config_text))
    out += config_text
    out += struct.pack("<I", len(params))
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"refusing to save non-finite parameter {name!r}")
        token = _dtype_token(arr)
        arr = arr.astype(_DTYPES[token])
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += token.encode("ascii")
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    digest = hashlib.blake2b(bytes(out), digest_size=8).digest()
    out += digest
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path):
    """Returns (params, NetConfig, meta dict). Refuses corrupt files."""
    blob = Path(path).read_bytes()
    if len(blob) < len(_CKPT_MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    body, stored = blob[:-8], blob[-8:]
    digest = hashlib.blake2b(body, digest_size=8).digest()
    if digest != stored:
        raise CheckpointError(f"{path}: checksum mismatch, refusing to load")
    if not body.startswith(_CKPT_MAGIC):
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = len(_CKPT_MAGIC)

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(body):
            raise CheckpointError(f"{path}: truncated checkpoint body")
        chunk = body[off : off + n]
        off += n
        return chunk

    (cfg_len,) = struct.unpack("<I", take(4))
    meta = parse_config_text(take(cfg_len).decode("utf-8"))
    (n_tensors,) = struct.unpack("<I", take(4))
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        if name in params:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        token = take(3).decode("ascii")
        if token not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype token {token!r}")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = 1
        for d in dims:
            count *= d
        itemsize = np.dtype(_DTYPES[token]).itemsize
        arr = np.frombuffer(take(count * itemsize), dtype=_DTYPES[token]).reshape(dims)
        params[name] = arr.astype(arr.dtype.newbyteorder("="))
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    return params, net_config_from_dict(meta), meta


# --- flat key=value configs ---


def parse_config_text(text: str) -> "OrderedDict[str, str]":
    out: "OrderedDict[str, str]" = OrderedDict()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_config(path) -> "OrderedDict[str, str]":
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def write_config(path, mapping: dict) -> None:
    Path(path).write_text(
        "".join(f"{k} = {v}\n" for k, v in mapping.items()), encoding="utf-8"
    )


def format_g9(x) -> str:
    """Canonical CSV number format: 9 significant digits, re-parse stable."""
    return f"{float(x):.9g}"


def write_pgm(path, img, data_range: float = 1.0) -> None:
    """8-bit PGM export for eyeballing only; values clipped to [0, data_range]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2D image, got {img.ndim}D")
    scaled = np.clip(img / data_range, 0.0, 1.0)
    bytes8 = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(bytes8.tobytes())

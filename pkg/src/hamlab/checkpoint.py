"""Binary checkpoint container for named parameter blocks.

Layout (little endian)::

    magic "HAMCKPT1" | u32 version | u32 n_blocks
    per block: u16 name_len | name (utf-8) | u8 ndim | u32 dims[ndim] | f64 data

A plain-text manifest next to the checkpoint lists block names, shapes and
the total parameter count.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

MAGIC = b"HAMCKPT1"
VERSION = 1


def save_checkpoint(path: Union[str, Path], params: Mapping[str, np.ndarray],
                    extra_manifest: Optional[str] = None) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name, block in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", block.ndim))
            fh.write(struct.pack(f"<{block.ndim}I", *block.shape))
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    manifest_path(path).write_text(manifest_text(params, extra_manifest))
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, n_blocks = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        params = {}
        for _ in range(n_blocks):
            (n,) = struct.unpack("<H", fh.read(2))
            name = fh.read(n).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise ValueError(f"{path}: block {name!r} is truncated")
            params[name] = data.reshape(shape).astype(np.float64)
    return params


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.txt")


def manifest_text(params: Mapping[str, np.ndarray], extra: Optional[str] = None) -> str:
    lines = [f"format = {MAGIC.decode()} v{VERSION}"]
    if extra:
        lines.append(extra.rstrip("\n"))
    for name, block in params.items():
        lines.append(f"{name}\t{'x'.join(map(str, block.shape))}\t{block.size}")
    lines.append(f"total_parameters = {sum(b.size for b in params.values())}")
    return "\n".join(lines) + "\n"

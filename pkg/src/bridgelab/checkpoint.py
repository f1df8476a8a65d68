"""Byte-stable parameter container.

Layout: a magic line, one line of sorted compact JSON (metadata plus the
name and length of every array), then the arrays as little-endian float64
in header order. Saving a loaded container reproduces the file exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParseError

MAGIC = b"BRIDGELAB-CKPT 1\n"


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    header = dict(meta)
    header["arrays"] = [{"name": k, "size": int(np.size(v))} for k, v in arrays.items()]
    header["dtype"] = "<f8"
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(line)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise ParseError("not a bridgelab checkpoint", 0)
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise ParseError("unterminated checkpoint header", len(MAGIC))
    try:
        header = json.loads(data[len(MAGIC):end])
    except json.JSONDecodeError as e:
        raise ParseError(f"bad checkpoint header: {e.msg}", len(MAGIC) + e.pos) from None
    pos = end + 1
    arrays = {}
    for spec in header["arrays"]:
        n = 8 * spec["size"]
        if pos + n > len(data):
            raise ParseError(f"truncated array {spec['name']!r}", pos)
        arrays[spec["name"]] = np.frombuffer(data[pos:pos + n], dtype="<f8").astype(float)
        pos += n
    if pos != len(data):
        raise ParseError("trailing bytes after the last array", pos)
    return header, arrays

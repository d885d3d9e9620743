"""Canonical JSON rendering and hashing helpers."""

import hashlib
import json
import math


def _check_finite(obj):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("non-finite number cannot be canonicalized")
    elif isinstance(obj, dict):
        for k, v in obj.items():
            if not isinstance(k, str):
                raise TypeError(f"canonical JSON keys must be strings, got {k!r}")
            _check_finite(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _check_finite(v)


def canonical_json(obj) -> bytes:
    """Render ``obj`` as canonical UTF-8 JSON.

    Keys are sorted, there is no insignificant whitespace, and floats use
    Python's shortest round-trip repr, so equal documents give equal bytes.
    """
    _check_finite(obj)
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)
    return text.encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_hash(obj) -> str:
    return sha256_hex(canonical_json(obj))


def sha256_file(path, block_size=65536) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(block_size), b""):
            h.update(block)
    return h.hexdigest()


def load_json_bytes(data: bytes):
    return json.loads(data.decode("utf-8"))

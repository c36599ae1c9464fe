"""Small shared helpers: stable seed derivation, canonical JSON, atomic writes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile


def canonical_json(obj) -> str:
    """Serialize with sorted keys and fixed separators so equal content gives
    equal bytes regardless of construction order."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(obj) -> str:
    """Hex digest identifying a JSON-serializable object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def stable_seed(*parts) -> int:
    """64-bit seed derived from arbitrary JSON-serializable parts.

    Unlike Python's builtin ``hash`` this is stable across processes, so
    per-trajectory and per-run RNG streams do not depend on interpreter
    state or execution order.
    """
    digest = hashlib.sha256(canonical_json(list(parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file and rename, so readers never see partial files."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def fmt_float(x: float) -> str:
    """17 significant digits: enough to round-trip any float64 exactly."""
    return format(float(x), ".17g")

from __future__ import annotations

import json
from typing import Any


def canonical_bytes(obj: Any) -> bytes:
    """Sorted keys, no insignificant whitespace, UTF-8, one trailing newline."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    return (text + "\n").encode("utf-8")


def number(value: float | int) -> float | int:
    """Collapse integral floats so 300 and 300.0 serialize identically."""
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value

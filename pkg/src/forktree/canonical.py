"""Canonical JSON: sorted keys, no insignificant whitespace, ASCII only."""

from __future__ import annotations

import json
from typing import Any


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def dump_bytes(obj: Any) -> bytes:
    return dumps(obj).encode("ascii")


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite number {name} is not canonical JSON")


def loads(data: str | bytes) -> Any:
    """Parse ``data`` and insist it is already in canonical form."""
    if isinstance(data, bytes):
        data = data.decode("ascii")
    obj = json.loads(data, parse_constant=_reject_constant)
    if dumps(obj) != data:
        raise ValueError("JSON is not in canonical form")
    return obj

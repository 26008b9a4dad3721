"""Block encoding, SHA-256 hashing and proof-of-work nonce search.

A header is encoded as::

    index (8, big-endian) | previous_hash (32) | len(payload) (8, big-endian) | payload | nonce (8, big-endian)

Difficulty is a count of required leading zero bits in the digest.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .errors import MiningError

HASH_SIZE = 32
ZERO_HASH = bytes(HASH_SIZE)
MAX_NONCE = 2**64 - 1
MAX_DIFFICULTY = 255
# mining is only supported up to this many bits; beyond it the search is not desk-scale
MAX_MINING_DIFFICULTY = 32

_U64 = struct.Struct(">Q")


def check_difficulty(bits: int) -> int:
    if isinstance(bits, bool) or not isinstance(bits, int):
        raise TypeError(f"difficulty must be an int, got {type(bits).__name__}")
    if not 0 <= bits <= MAX_DIFFICULTY:
        raise ValueError(f"difficulty must be in [0, {MAX_DIFFICULTY}], got {bits}")
    return bits


@dataclass(frozen=True)
class BlockHeader:
    index: int
    previous_hash: bytes
    payload: bytes
    nonce: int = 0

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("block index must be non-negative")
        if len(self.previous_hash) != HASH_SIZE:
            raise ValueError(f"previous_hash must be {HASH_SIZE} bytes")
        if not 0 <= self.nonce <= MAX_NONCE:
            raise ValueError("nonce must fit in 64 bits")
        if not isinstance(self.payload, bytes):
            raise TypeError("payload must be bytes")


@dataclass(frozen=True)
class Block:
    """A header together with its cached digest."""

    header: BlockHeader
    hash: bytes

    @property
    def index(self) -> int:
        return self.header.index

    @property
    def previous_hash(self) -> bytes:
        return self.header.previous_hash

    @property
    def payload(self) -> bytes:
        return self.header.payload

    @property
    def nonce(self) -> int:
        return self.header.nonce

    @property
    def hash_hex(self) -> str:
        return self.hash.hex()


def _prefix(index: int, previous_hash: bytes, payload: bytes) -> bytes:
    return b"".join((_U64.pack(index), previous_hash, _U64.pack(len(payload)), payload))


def canonical_serialize(header: BlockHeader) -> bytes:
    return _prefix(header.index, header.previous_hash, header.payload) + _U64.pack(header.nonce)


def hash_block(header: BlockHeader) -> bytes:
    return hashlib.sha256(canonical_serialize(header)).digest()


def meets_target(digest: bytes, bits: int) -> bool:
    """True iff the first ``bits`` bits of ``digest`` are zero."""
    if bits <= 0:
        return True
    return int.from_bytes(digest, "big") >> (len(digest) * 8 - bits) == 0


def mine(index: int, previous_hash: bytes, payload: bytes, bits: int) -> Block:
    """Search nonces 0, 1, 2, ... and return the first block meeting ``bits``."""
    check_difficulty(bits)
    if bits > MAX_MINING_DIFFICULTY:
        raise ValueError(f"mining supports difficulty <= {MAX_MINING_DIFFICULTY}, got {bits}")
    # validates the fields before the search starts
    BlockHeader(index, previous_hash, payload, 0)

    base = hashlib.sha256(_prefix(index, previous_hash, payload))
    shift = HASH_SIZE * 8 - bits
    pack = _U64.pack
    nonce = 0
    while nonce <= MAX_NONCE:
        h = base.copy()
        h.update(pack(nonce))
        digest = h.digest()
        if bits == 0 or int.from_bytes(digest, "big") >> shift == 0:
            return Block(BlockHeader(index, previous_hash, payload, nonce), digest)
        nonce += 1
    raise MiningError(f"no nonce meets difficulty {bits} for block {index}")


_BLOCK_KEYS = ("hash", "index", "nonce", "payload_hex", "previous_hash")


def block_to_doc(block: Block) -> dict:
    return {
        "index": block.index,
        "previous_hash": block.previous_hash.hex(),
        "payload_hex": block.payload.hex(),
        "nonce": block.nonce,
        "hash": block.hash.hex(),
    }


def _hex_field(doc: dict, key: str, size: int | None) -> bytes:
    value = doc[key]
    if not isinstance(value, str) or value != value.lower():
        raise ValueError(f"{key} must be lowercase hex")
    raw = bytes.fromhex(value)
    if raw.hex() != value or (size is not None and len(raw) != size):
        raise ValueError(f"{key} is not {size or 'a whole number of'} bytes of hex")
    return raw


def block_from_doc(doc: object) -> Block:
    """Decode a block document. The stored hash is returned as-is, not checked."""
    if not isinstance(doc, dict) or tuple(sorted(doc)) != _BLOCK_KEYS:
        raise ValueError(f"block must have exactly the keys {list(_BLOCK_KEYS)}")
    for key in ("index", "nonce"):
        if isinstance(doc[key], bool) or not isinstance(doc[key], int):
            raise ValueError(f"{key} must be an integer")
    header = BlockHeader(
        doc["index"],
        _hex_field(doc, "previous_hash", HASH_SIZE),
        _hex_field(doc, "payload_hex", None),
        doc["nonce"],
    )
    return Block(header, _hex_field(doc, "hash", HASH_SIZE))

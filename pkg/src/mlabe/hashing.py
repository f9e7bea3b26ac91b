"""Hashing and deterministic key expansion primitives.

Every multi-part hash here length-prefixes its parts (8-byte big-endian
length before each part) so that concatenation is unambiguous: H(a, b)
can never collide with H(a + b).
"""

from __future__ import annotations

import hashlib
import hmac

DIGEST_BYTES = 32


def length_prefixed(*parts: bytes) -> bytes:
    """Concatenate parts, each preceded by its 8-byte big-endian length."""
    out = bytearray()
    for part in parts:
        out += len(part).to_bytes(8, "big")
        out += part
    return bytes(out)


def fo_hash(*parts: bytes) -> bytes:
    """256-bit hash over the length-prefixed concatenation of the parts.

    This is the hash used wherever the protocol derives nonces from
    message material (randomness derivation for the CCA transform and
    for layer wrapping).
    """
    return hashlib.sha256(length_prefixed(*parts)).digest()


def prf(key: bytes, *parts: bytes) -> bytes:
    """Keyed 256-bit expansion of the length-prefixed parts."""
    return hmac.new(key, length_prefixed(*parts), hashlib.sha256).digest()


def u32(value: int) -> bytes:
    return value.to_bytes(4, "big")


def u64(value: int) -> bytes:
    return value.to_bytes(8, "big")


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError("xor operands must have equal length")
    return bytes(x ^ y for x, y in zip(a, b))

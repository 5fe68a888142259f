"""Lesamnta-LW-256 and the SHA-1 baseline.

Lesamnta-LW is a plain Merkle-Damgard hash. Its compression function runs a
64-round block cipher with a 128-bit key and a 256-bit plaintext: the first
half of the chaining value is the key, and the message block followed by the
second half of the chaining value is the plaintext. The cipher output is the
next chaining value, with no feed-forward.

Each round updates the key state with a 4-branch Feistel step over 32-bit
words (non-linear ``G``), then mixes the data state with a 4-branch Feistel
step over 64-bit words (non-linear ``F``). Both non-linear functions are
SubBytes followed by MixColumns over GF(2^8).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import StrEnum
from typing import NewType

from medsentry._rijndael import SBOX, mix_column
from medsentry._types import LengthOverflowError, WidthError

Digest256 = NewType("Digest256", bytes)
Digest160 = NewType("Digest160", bytes)

LLW_DIGEST_BYTES = 32
LLW_BLOCK_BYTES = 16
LLW_ROUNDS = 64
_MAX_BIT_LENGTH = 1 << 64

# Round constants and the initial chaining value are read off the S-box table.
# TODO: swap in the published Lesamnta-LW round constants and IV, then fill
# tests/fixtures/llw256_vectors.txt with the published LLW-256 known answers.
ROUND_CONSTANTS: tuple[int, ...] = tuple(
    int.from_bytes(bytes(SBOX[4 * r + j] for j in range(4)), "big")
    for r in range(LLW_ROUNDS)
)
INITIAL_CHAIN = bytes(SBOX[0xE0 + i] for i in range(LLW_DIGEST_BYTES))


class Digest(StrEnum):
    """Message digest selectable for signatures."""

    SHA1 = "sha1"
    LLW256 = "llw256"

    def compute(self, data: bytes) -> bytes:
        """Digest ``data`` with this algorithm."""
        if self is Digest.SHA1:
            return sha1_hash(data)
        return llw_hash(data)


def _g(word: int) -> int:
    a = mix_column(
        SBOX[word >> 24],
        SBOX[(word >> 16) & 0xFF],
        SBOX[(word >> 8) & 0xFF],
        SBOX[word & 0xFF],
    )
    return (a[0] << 24) | (a[1] << 16) | (a[2] << 8) | a[3]


def _f(word: int) -> int:
    b = [SBOX[(word >> (56 - 8 * i)) & 0xFF] for i in range(8)]
    # 4x2 state, columns b[0:4] and b[4:8]; odd rows swap columns.
    left = mix_column(b[0], b[5], b[2], b[7])
    right = mix_column(b[4], b[1], b[6], b[3])
    return int.from_bytes(bytes(left + right), "big")


def _encrypt(key: bytes, plaintext: bytes) -> bytes:
    k0, k1, k2, k3 = (
        int.from_bytes(key[4 * i : 4 * i + 4], "big") for i in range(4)
    )
    x0, x1, x2, x3 = (
        int.from_bytes(plaintext[8 * i : 8 * i + 8], "big") for i in range(4)
    )
    for constant in ROUND_CONSTANTS:
        k0, k1, k2, k3 = k3 ^ _g(k2 ^ constant), k0, k1, k2
        x0, x1, x2, x3 = x3 ^ _f(x2 ^ (k0 << 32)), x0, x1, x2
    return b"".join(x.to_bytes(8, "big") for x in (x0, x1, x2, x3))


def llw_pad(data: bytes) -> list[bytes]:
    """Split ``data`` into 128-bit blocks and append a length-only block.

    The last data block is zero-filled. The final block holds the input bit
    length as a 64-bit big-endian integer followed by eight zero bytes.
    """
    bit_length = len(data) * 8
    if bit_length >= _MAX_BIT_LENGTH:
        msg = f"input of {bit_length} bits exceeds the 2**64 bit bound"
        raise LengthOverflowError(msg)
    blocks = [
        bytes(data[i : i + LLW_BLOCK_BYTES]).ljust(LLW_BLOCK_BYTES, b"\x00")
        for i in range(0, len(data), LLW_BLOCK_BYTES)
    ]
    blocks.append(bit_length.to_bytes(8, "big") + bytes(8))
    return blocks


def llw_compress(chain: bytes, block: bytes) -> bytes:
    """Compress one 128-bit block into a 256-bit chaining value."""
    if len(chain) != LLW_DIGEST_BYTES or len(block) != LLW_BLOCK_BYTES:
        msg = (
            f"chain/block must be {LLW_DIGEST_BYTES}/{LLW_BLOCK_BYTES} bytes, "
            f"got {len(chain)}/{len(block)}"
        )
        raise WidthError(msg)
    return _encrypt(chain[:16], block + chain[16:])


@dataclass
class LlwState:
    """Running Merkle-Damgard state for incremental hashing."""

    chain: bytes = INITIAL_CHAIN
    message_block: bytes = b""
    round_count: int = LLW_ROUNDS
    _length: int = field(default=0, repr=False)

    def update(self, data: bytes) -> LlwState:
        """Absorb ``data``; full blocks are compressed immediately."""
        self._length += len(data)
        if self._length * 8 >= _MAX_BIT_LENGTH:
            msg = "input exceeds the 2**64 bit bound"
            raise LengthOverflowError(msg)
        buffered = self.message_block + bytes(data)
        full = len(buffered) - len(buffered) % LLW_BLOCK_BYTES
        for offset in range(0, full, LLW_BLOCK_BYTES):
            self.chain = llw_compress(
                self.chain, buffered[offset : offset + LLW_BLOCK_BYTES]
            )
        self.message_block = buffered[full:]
        return self

    def digest(self) -> Digest256:
        """Finish without mutating the state and return the 256-bit digest."""
        chain = self.chain
        if self.message_block:
            chain = llw_compress(
                chain, self.message_block.ljust(LLW_BLOCK_BYTES, b"\x00")
            )
        length_block = (self._length * 8).to_bytes(8, "big") + bytes(8)
        return Digest256(llw_compress(chain, length_block))


def llw_hash(data: bytes) -> Digest256:
    """Lesamnta-LW-256 digest of ``data``."""
    chain = INITIAL_CHAIN
    for block in llw_pad(data):
        chain = llw_compress(chain, block)
    return Digest256(chain)


def sha1_hash(data: bytes) -> Digest160:
    """Standard SHA-1 digest, the comparison baseline."""
    return Digest160(hashlib.sha1(data).digest())  # noqa: S324

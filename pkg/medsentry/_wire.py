"""Fixed-width XOR algebra and the envelope wire format.

Envelope layout, big-endian::

    leg_tag(1) || sender_id(16) || iv(16) || ciphertext_len(4) || ciphertext
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from medsentry._types import (
    ENTITY_ID_BYTES,
    IV_BYTES,
    EntityId,
    RejectError,
    RejectReason,
    WidthError,
)

HEADER_BYTES = 1 + ENTITY_ID_BYTES + IV_BYTES + 4


class LegTag(IntEnum):
    """Protocol leg an envelope belongs to; fixes its plaintext layout."""

    R_SEN1 = 1
    R_BS2 = 2
    R_IS2 = 3
    R_RS2 = 4
    R_IS3 = 5
    R_BS3 = 6


REQUEST_LEGS = frozenset({LegTag.R_SEN1, LegTag.R_BS2, LegTag.R_IS2})


def expand(value: bytes, width: int) -> bytes:
    """Repeat ``value`` cyclically to exactly ``width`` bytes."""
    if len(value) > width:
        msg = f"cannot expand {len(value)} bytes to {width}"
        raise WidthError(msg)
    if not value:
        msg = "cannot expand an empty value"
        raise WidthError(msg)
    reps = -(-width // len(value))
    return (value * reps)[:width]


def xor(*operands: bytes) -> bytes:
    """XOR equal-width operands."""
    width = len(operands[0])
    if any(len(op) != width for op in operands):
        msg = f"xor operands differ in width: {[len(op) for op in operands]}"
        raise WidthError(msg)
    acc = int.from_bytes(operands[0], "big")
    for op in operands[1:]:
        acc ^= int.from_bytes(op, "big")
    return acc.to_bytes(width, "big")


def mask(data: bytes, recipient: EntityId) -> bytes:
    """XOR ``data`` with the recipient ID keystream; self-inverse."""
    if not data:
        return b""
    return xor(data, expand(recipient, len(data)))


@dataclass(frozen=True)
class Envelope:
    """One protocol message as carried by the network."""

    leg: LegTag
    sender: EntityId
    iv: bytes
    ciphertext: bytes

    def encode(self) -> bytes:
        """Serialize to the wire layout."""
        return (
            bytes([self.leg])
            + self.sender
            + self.iv
            + len(self.ciphertext).to_bytes(4, "big")
            + self.ciphertext
        )

    @property
    def bit_length(self) -> int:
        """Size on the wire in bits."""
        return 8 * (HEADER_BYTES + len(self.ciphertext))

    @classmethod
    def decode(cls, data: bytes) -> Envelope:
        """Parse the wire layout; framing faults are ``malformed`` rejects."""
        if len(data) < HEADER_BYTES:
            msg = f"envelope of {len(data)} bytes is shorter than its header"
            raise RejectError(RejectReason.MALFORMED, msg)
        try:
            leg = LegTag(data[0])
        except ValueError as exc:
            msg = f"unknown leg tag {data[0]}"
            raise RejectError(RejectReason.MALFORMED, msg) from exc
        sender = EntityId(data[1 : 1 + ENTITY_ID_BYTES])
        iv = data[1 + ENTITY_ID_BYTES : 1 + ENTITY_ID_BYTES + IV_BYTES]
        length = int.from_bytes(data[HEADER_BYTES - 4 : HEADER_BYTES], "big")
        ciphertext = data[HEADER_BYTES:]
        if len(ciphertext) != length:
            msg = f"declared {length} ciphertext bytes, carried {len(ciphertext)}"
            raise RejectError(RejectReason.MALFORMED, msg)
        return cls(leg=leg, sender=sender, iv=iv, ciphertext=ciphertext)

"""Rijndael with 192-bit keys and a configurable round count, plus CTR payloads.

The cipher is standard AES-192 when ``rounds=12``. ``rounds=10`` runs the same
round function over the first eleven round keys of the standard schedule.
"""

from dataclasses import dataclass
from functools import lru_cache

from medsentry._rijndael import INV_SBOX, SBOX, inv_mix_column, mix_column, xtime
from medsentry._types import IV_BYTES, ParameterError, WidthError

KEY_BYTES = 24
BLOCK_BYTES = 16
_NK = KEY_BYTES // 4
ALLOWED_ROUNDS = frozenset({10, 12})

# Byte i of the state sits at row i % 4, column i // 4.
StateArray = list[int]

_SHIFT = tuple((i % 4) + 4 * (((i // 4) + (i % 4)) % 4) for i in range(16))
_INV_SHIFT = tuple(_SHIFT.index(i) for i in range(16))


@dataclass(frozen=True)
class RoundConfig:
    """Number of cipher rounds; 10 by default, 12 for standard AES-192."""

    rounds: int = 10

    def __post_init__(self) -> None:
        """Reject round counts other than 10 and 12."""
        if self.rounds not in ALLOWED_ROUNDS:
            msg = f"rounds must be 10 or 12, got {self.rounds}"
            raise ParameterError(msg)


@dataclass(frozen=True)
class KeySchedule:
    """Expanded round keys, ``rounds + 1`` blocks of 16 bytes."""

    round_keys: tuple[tuple[int, ...], ...]

    @property
    def rounds(self) -> int:
        """Number of rounds this schedule drives."""
        return len(self.round_keys) - 1


def expand_key(key: bytes, cfg: RoundConfig | None = None) -> KeySchedule:
    """Expand a 24-byte key into ``cfg.rounds + 1`` round keys."""
    cfg = cfg or RoundConfig()
    if len(key) != KEY_BYTES:
        msg = f"AES-192 key must be {KEY_BYTES} bytes, got {len(key)}"
        raise WidthError(msg)
    return _expand_key_cached(bytes(key), cfg.rounds)


@lru_cache(maxsize=256)
def _expand_key_cached(key: bytes, rounds: int) -> KeySchedule:
    total_words = 4 * (rounds + 1)
    words = [list(key[4 * i : 4 * i + 4]) for i in range(_NK)]
    rcon = 1
    for i in range(_NK, total_words):
        temp = list(words[i - 1])
        if i % _NK == 0:
            temp = temp[1:] + temp[:1]
            temp = [SBOX[b] for b in temp]
            temp[0] ^= rcon
            rcon = xtime(rcon)
        words.append([a ^ b for a, b in zip(words[i - _NK], temp, strict=True)])
    round_keys = tuple(
        tuple(b for word in words[4 * r : 4 * r + 4] for b in word)
        for r in range(rounds + 1)
    )
    return KeySchedule(round_keys=round_keys)


def _add_round_key(state: StateArray, round_key: tuple[int, ...]) -> StateArray:
    return [s ^ k for s, k in zip(state, round_key, strict=True)]


def _mix_columns(state: StateArray) -> StateArray:
    out: StateArray = []
    for c in range(4):
        out.extend(mix_column(*state[4 * c : 4 * c + 4]))
    return out


def _inv_mix_columns(state: StateArray) -> StateArray:
    out: StateArray = []
    for c in range(4):
        out.extend(inv_mix_column(*state[4 * c : 4 * c + 4]))
    return out


def _check_block(block: bytes) -> None:
    if len(block) != BLOCK_BYTES:
        msg = f"block must be {BLOCK_BYTES} bytes, got {len(block)}"
        raise WidthError(msg)


def encrypt_block(block: bytes, schedule: KeySchedule) -> bytes:
    """Encrypt one 16-byte block; the last round skips MixColumns."""
    _check_block(block)
    keys = schedule.round_keys
    state = _add_round_key(list(block), keys[0])
    for r in range(1, schedule.rounds):
        state = [SBOX[state[i]] for i in _SHIFT]
        state = _add_round_key(_mix_columns(state), keys[r])
    state = [SBOX[state[i]] for i in _SHIFT]
    return bytes(_add_round_key(state, keys[-1]))


def decrypt_block(block: bytes, schedule: KeySchedule) -> bytes:
    """Invert :func:`encrypt_block` under the same schedule."""
    _check_block(block)
    keys = schedule.round_keys
    state = _add_round_key(list(block), keys[-1])
    state = [INV_SBOX[state[i]] for i in _INV_SHIFT]
    for r in range(schedule.rounds - 1, 0, -1):
        state = _inv_mix_columns(_add_round_key(state, keys[r]))
        state = [INV_SBOX[state[i]] for i in _INV_SHIFT]
    return bytes(_add_round_key(state, keys[0]))


def _keystream_xor(
    data: bytes, key: bytes, cfg: RoundConfig | None, iv: bytes
) -> bytes:
    if len(iv) != IV_BYTES:
        msg = f"iv must be {IV_BYTES} bytes, got {len(iv)}"
        raise WidthError(msg)
    schedule = expand_key(key, cfg)
    counter = int.from_bytes(iv, "big")
    out = bytearray(len(data))
    for offset in range(0, len(data), BLOCK_BYTES):
        pad = encrypt_block(
            (counter % (1 << 128)).to_bytes(BLOCK_BYTES, "big"), schedule
        )
        counter += 1
        chunk = data[offset : offset + BLOCK_BYTES]
        out[offset : offset + len(chunk)] = bytes(
            a ^ b for a, b in zip(chunk, pad, strict=False)
        )
    return bytes(out)


def encrypt_payload(
    data: bytes, key: bytes, cfg: RoundConfig | None, iv: bytes
) -> bytes:
    """Encrypt arbitrary-length data in counter mode starting at ``iv``.

    Counter blocks are ``iv + i`` as 128-bit big-endian integers, so the
    ciphertext is exactly as long as the plaintext.
    """
    return _keystream_xor(data, key, cfg, iv)


def decrypt_payload(
    data: bytes, key: bytes, cfg: RoundConfig | None, iv: bytes
) -> bytes:
    """Invert :func:`encrypt_payload`."""
    return _keystream_xor(data, key, cfg, iv)

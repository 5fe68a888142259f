"""GF(2^8) arithmetic and the Rijndael S-box, shared by AES and Lesamnta-LW."""

_AES_POLY = 0x11B


def gf_mul(a: int, b: int) -> int:
    """Multiply two field elements modulo the Rijndael polynomial."""
    result = 0
    while b:
        if b & 1:
            result ^= a
        a <<= 1
        if a & 0x100:
            a ^= _AES_POLY
        b >>= 1
    return result


def xtime(a: int) -> int:
    """Multiply by x (0x02)."""
    a <<= 1
    return a ^ _AES_POLY if a & 0x100 else a


def _inverse(a: int) -> int:
    if a == 0:
        return 0
    # a^254 == a^-1 in GF(2^8)
    result, power, exp = 1, a, 254
    while exp:
        if exp & 1:
            result = gf_mul(result, power)
        power = gf_mul(power, power)
        exp >>= 1
    return result


def _rotl8(x: int, shift: int) -> int:
    return ((x << shift) | (x >> (8 - shift))) & 0xFF


def _build_sbox() -> tuple[tuple[int, ...], tuple[int, ...]]:
    sbox = [0] * 256
    inv = [0] * 256
    for x in range(256):
        b = _inverse(x)
        s = b ^ _rotl8(b, 1) ^ _rotl8(b, 2) ^ _rotl8(b, 3) ^ _rotl8(b, 4) ^ 0x63
        sbox[x] = s
        inv[s] = x
    return tuple(sbox), tuple(inv)


SBOX, INV_SBOX = _build_sbox()

MUL2 = tuple(gf_mul(x, 2) for x in range(256))
MUL3 = tuple(gf_mul(x, 3) for x in range(256))
MUL9 = tuple(gf_mul(x, 9) for x in range(256))
MUL11 = tuple(gf_mul(x, 11) for x in range(256))
MUL13 = tuple(gf_mul(x, 13) for x in range(256))
MUL14 = tuple(gf_mul(x, 14) for x in range(256))


def mix_column(a0: int, a1: int, a2: int, a3: int) -> tuple[int, int, int, int]:
    """Apply the MixColumns matrix to one 4-byte column."""
    return (
        MUL2[a0] ^ MUL3[a1] ^ a2 ^ a3,
        a0 ^ MUL2[a1] ^ MUL3[a2] ^ a3,
        a0 ^ a1 ^ MUL2[a2] ^ MUL3[a3],
        MUL3[a0] ^ a1 ^ a2 ^ MUL2[a3],
    )


def inv_mix_column(a0: int, a1: int, a2: int, a3: int) -> tuple[int, int, int, int]:
    """Apply the inverse MixColumns matrix to one 4-byte column."""
    return (
        MUL14[a0] ^ MUL11[a1] ^ MUL13[a2] ^ MUL9[a3],
        MUL9[a0] ^ MUL14[a1] ^ MUL11[a2] ^ MUL13[a3],
        MUL13[a0] ^ MUL9[a1] ^ MUL14[a2] ^ MUL11[a3],
        MUL11[a0] ^ MUL13[a1] ^ MUL9[a2] ^ MUL14[a3],
    )

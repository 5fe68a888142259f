"""Short-Weierstrass curve arithmetic over prime fields."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING

from medsentry._types import MalformedKeyError

if TYPE_CHECKING:
    from pathlib import Path


@dataclass(frozen=True)
class Point:
    """Affine curve point; the point at infinity is represented by ``None``."""

    x: int
    y: int


@dataclass(frozen=True)
class CurveParams:
    """Curve ``y^2 = x^3 + a*x + b`` over GF(p) with base point ``g`` of order q."""

    name: str
    p: int
    a: int
    b: int
    g: Point
    q: int
    cofactor: int = 1

    @property
    def byte_length(self) -> int:
        """Width of a field element or scalar on the wire."""
        return (max(self.p, self.q).bit_length() + 7) // 8

    def contains(self, point: Point | None) -> bool:
        """Return whether ``point`` lies on the curve (infinity does not count)."""
        if point is None:
            return False
        x, y = point.x, point.y
        if not (0 <= x < self.p and 0 <= y < self.p):
            return False
        return (y * y - (x * x * x + self.a * x + self.b)) % self.p == 0


P256 = CurveParams(
    name="secp256r1",
    p=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF,
    a=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFC,
    b=0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B,
    g=Point(
        x=0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296,
        y=0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5,
    ),
    q=0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
)


def curve_document(curve: CurveParams) -> dict[str, str]:
    """Hex-string form of ``curve`` as read back by :func:`load_curve`."""
    return {
        "name": curve.name,
        "p": format(curve.p, "x"),
        "a": format(curve.a, "x"),
        "b": format(curve.b, "x"),
        "gx": format(curve.g.x, "x"),
        "gy": format(curve.g.y, "x"),
        "q": format(curve.q, "x"),
        "cofactor": format(curve.cofactor, "x"),
    }


def load_curve(path: Path) -> CurveParams:
    """Load curve constants from a JSON file of hex strings.

    Expected keys: ``name``, ``p``, ``a``, ``b``, ``gx``, ``gy``, ``q`` and
    optionally ``cofactor``.
    """
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        curve = CurveParams(
            name=raw["name"],
            p=int(raw["p"], 16),
            a=int(raw["a"], 16),
            b=int(raw["b"], 16),
            g=Point(int(raw["gx"], 16), int(raw["gy"], 16)),
            q=int(raw["q"], 16),
            cofactor=int(raw.get("cofactor", "1"), 16),
        )
    except (KeyError, TypeError, ValueError) as exc:
        msg = f"curve constants in {path} are malformed: {exc}"
        raise MalformedKeyError(msg) from exc
    if not curve.contains(curve.g):
        msg = f"base point of {curve.name} is not on the curve"
        raise MalformedKeyError(msg)
    return curve


# Jacobian coordinates (X, Y, Z) stand for the affine point (X/Z^2, Y/Z^3).
_Jacobian = tuple[int, int, int]
_INFINITY: _Jacobian = (1, 1, 0)


def _to_jacobian(point: Point | None) -> _Jacobian:
    if point is None:
        return _INFINITY
    return (point.x, point.y, 1)


def _to_affine(jp: _Jacobian, curve: CurveParams) -> Point | None:
    x, y, z = jp
    if z == 0:
        return None
    p = curve.p
    z_inv = pow(z, -1, p)
    z_inv2 = z_inv * z_inv % p
    return Point(x * z_inv2 % p, y * z_inv2 * z_inv % p)


def _double(jp: _Jacobian, curve: CurveParams) -> _Jacobian:
    x, y, z = jp
    if z == 0 or y == 0:
        return _INFINITY
    p = curve.p
    yy = y * y % p
    s = 4 * x * yy % p
    zz = z * z % p
    m = (3 * x * x + curve.a * zz * zz) % p
    x3 = (m * m - 2 * s) % p
    y3 = (m * (s - x3) - 8 * yy * yy) % p
    z3 = 2 * y * z % p
    return (x3, y3, z3)


def _add(a: _Jacobian, b: _Jacobian, curve: CurveParams) -> _Jacobian:
    x1, y1, z1 = a
    x2, y2, z2 = b
    if z1 == 0:
        return b
    if z2 == 0:
        return a
    p = curve.p
    z1z1 = z1 * z1 % p
    z2z2 = z2 * z2 % p
    u1 = x1 * z2z2 % p
    u2 = x2 * z1z1 % p
    s1 = y1 * z2 * z2z2 % p
    s2 = y2 * z1 * z1z1 % p
    if u1 == u2:
        if s1 != s2:
            return _INFINITY
        return _double(a, curve)
    h = (u2 - u1) % p
    r = (s2 - s1) % p
    hh = h * h % p
    hhh = h * hh % p
    v = u1 * hh % p
    x3 = (r * r - hhh - 2 * v) % p
    y3 = (r * (v - x3) - s1 * hhh) % p
    z3 = h * z1 * z2 % p
    return (x3, y3, z3)


def point_add(a: Point | None, b: Point | None, curve: CurveParams) -> Point | None:
    """Group addition of two affine points."""
    return _to_affine(_add(_to_jacobian(a), _to_jacobian(b), curve), curve)


def scalar_mult(k: int, point: Point | None, curve: CurveParams) -> Point | None:
    """Compute ``k * point`` by left-to-right double-and-add."""
    k %= curve.q
    if k == 0 or point is None:
        return None
    base = _to_jacobian(point)
    acc = _INFINITY
    for bit in bin(k)[2:]:
        acc = _double(acc, curve)
        if bit == "1":
            acc = _add(acc, base, curve)
    return _to_affine(acc, curve)


def double_scalar_mult(
    u1: int, p1: Point | None, u2: int, p2: Point | None, curve: CurveParams
) -> Point | None:
    """Compute ``u1*p1 + u2*p2`` with a shared doubling chain."""
    j1, j2 = _to_jacobian(p1), _to_jacobian(p2)
    both = _add(j1, j2, curve)
    u1 %= curve.q
    u2 %= curve.q
    acc = _INFINITY
    for i in range(max(u1.bit_length(), u2.bit_length()) - 1, -1, -1):
        acc = _double(acc, curve)
        b1, b2 = (u1 >> i) & 1, (u2 >> i) & 1
        if b1 and b2:
            acc = _add(acc, both, curve)
        elif b1:
            acc = _add(acc, j1, curve)
        elif b2:
            acc = _add(acc, j2, curve)
    return _to_affine(acc, curve)


def encode_point(point: Point, curve: CurveParams) -> bytes:
    """Uncompressed SEC1 encoding: ``04 || x || y``."""
    width = (curve.p.bit_length() + 7) // 8
    return b"\x04" + point.x.to_bytes(width, "big") + point.y.to_bytes(width, "big")


def decode_point(data: bytes, curve: CurveParams) -> Point:
    """Parse an uncompressed SEC1 point and check it is on ``curve``."""
    width = (curve.p.bit_length() + 7) // 8
    if len(data) != 1 + 2 * width or data[0] != 0x04:
        msg = f"expected {1 + 2 * width}-byte uncompressed point"
        raise MalformedKeyError(msg)
    point = Point(
        int.from_bytes(data[1 : 1 + width], "big"),
        int.from_bytes(data[1 + width :], "big"),
    )
    if not curve.contains(point):
        msg = "point is not on the curve"
        raise MalformedKeyError(msg)
    return point

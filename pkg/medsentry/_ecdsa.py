"""ECDSA with a pluggable message digest (EC_SHA and EC_LLW)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from medsentry._ec import P256, CurveParams, Point, double_scalar_mult, scalar_mult
from medsentry._hashing import Digest, llw_hash
from medsentry._types import MalformedKeyError, ParameterError, WidthError

SEED_BYTES = 32


@dataclass(frozen=True)
class KeyPair:
    """Private scalar ``private`` and public point ``public = private * G``."""

    private: int
    public: Point


@dataclass(frozen=True)
class SignatureRS:
    """An ECDSA ``(r, s)`` pair."""

    r: int
    s: int

    def encode(self, curve: CurveParams = P256) -> bytes:
        """Fixed-width big-endian ``r || s`` (64 bytes on P-256)."""
        width = curve.byte_length
        return self.r.to_bytes(width, "big") + self.s.to_bytes(width, "big")

    @classmethod
    def decode(cls, data: bytes, curve: CurveParams = P256) -> SignatureRS:
        """Parse the fixed-width form produced by :meth:`encode`."""
        width = curve.byte_length
        if len(data) != 2 * width:
            msg = f"signature must be {2 * width} bytes, got {len(data)}"
            raise WidthError(msg)
        return cls(
            int.from_bytes(data[:width], "big"), int.from_bytes(data[width:], "big")
        )


def digest_to_scalar(digest: bytes, curve: CurveParams = P256) -> int:
    """Leftmost 256 bits of ``digest`` as a big-endian integer, reduced mod q."""
    return int.from_bytes(digest[:32], "big") % curve.q


def keygen(seed: bytes, curve: CurveParams = P256) -> KeyPair:
    """Derive a key pair from 32 bytes of entropy via Lesamnta-LW."""
    if len(seed) != SEED_BYTES:
        msg = f"seed must be {SEED_BYTES} bytes, got {len(seed)}"
        raise WidthError(msg)
    if not any(seed):
        msg = "seed must be nonzero"
        raise ParameterError(msg)
    counter = 0
    while True:
        private = int.from_bytes(
            llw_hash(seed + counter.to_bytes(4, "big")), "big"
        ) % curve.q
        if private:
            break
        counter += 1
    public = scalar_mult(private, curve.g, curve)
    if public is None:
        msg = "derived public key is the point at infinity"
        raise MalformedKeyError(msg)
    return KeyPair(private=private, public=public)


def derive_nonce(
    private: int, e: int, curve: CurveParams = P256, attempt: int = 0
) -> int:
    """Deterministic per-signature nonce, rejection-sampled into ``[1, q-1]``.

    Candidates are the top ``bitlen(q)`` bits of
    ``SHA-256(private || e || counter)``; ``attempt`` skips that many accepted
    candidates so signing can move past a degenerate ``r`` or ``s``.
    """
    width = curve.byte_length
    qlen = curve.q.bit_length()
    counter = 0
    accepted = 0
    while True:
        block = hashlib.sha256(
            private.to_bytes(width, "big")
            + e.to_bytes(width, "big")
            + counter.to_bytes(4, "big")
        ).digest()
        counter += 1
        candidate = int.from_bytes(block, "big") >> max(0, 256 - qlen)
        if 1 <= candidate < curve.q:
            if accepted == attempt:
                return candidate
            accepted += 1


def sign_digest(private: int, e: int, curve: CurveParams = P256) -> SignatureRS:
    """Sign an already reduced message scalar ``e``."""
    if not 1 <= private < curve.q:
        msg = "private scalar must lie in [1, q-1]"
        raise ParameterError(msg)
    attempt = 0
    while True:
        k = derive_nonce(private, e, curve, attempt)
        attempt += 1
        point = scalar_mult(k, curve.g, curve)
        if point is None:
            continue
        r = point.x % curve.q
        if r == 0:
            continue
        s = pow(k, -1, curve.q) * (e + r * private) % curve.q
        if s == 0:
            continue
        return SignatureRS(r, s)


def sign(
    private: int, message: bytes, digest: Digest, curve: CurveParams = P256
) -> SignatureRS:
    """ECDSA-sign ``message`` under ``digest``; repeatable for equal inputs."""
    return sign_digest(private, digest_to_scalar(digest.compute(message), curve), curve)


def verify_digest(
    public: Point, e: int, sig: SignatureRS, curve: CurveParams = P256
) -> bool:
    """Verify a signature over an already reduced message scalar ``e``."""
    if not curve.contains(public):
        msg = "public key is not on the curve"
        raise MalformedKeyError(msg)
    q = curve.q
    if not (1 <= sig.r < q and 1 <= sig.s < q):
        return False
    w = pow(sig.s, -1, q)
    point = double_scalar_mult(e * w, curve.g, sig.r * w, public, curve)
    if point is None:
        return False
    return point.x % q == sig.r


def verify(
    public: Point,
    message: bytes,
    sig: SignatureRS,
    digest: Digest,
    curve: CurveParams = P256,
) -> bool:
    """Return whether ``sig`` is valid for ``message`` under ``public``."""
    return verify_digest(
        public, digest_to_scalar(digest.compute(message), curve), sig, curve
    )

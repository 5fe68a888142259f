"""Deployment provisioning: identities, keys, pairwise AES keys and SS shares."""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import structlog

from medsentry._aes import KEY_BYTES, RoundConfig
from medsentry._datasets import IS_STORE_FILE, InfoRecord, InfoStore, atomic_write
from medsentry._ec import (
    P256,
    CurveParams,
    Point,
    curve_document,
    decode_point,
    encode_point,
    load_curve,
)
from medsentry._ecdsa import KeyPair, SignatureRS, keygen, sign, verify
from medsentry._hashing import Digest, llw_hash
from medsentry._policy import StoreKey
from medsentry._shamir import (
    DEFAULT_THRESHOLD,
    PRIME_256,
    MasterSecret,
    Share,
    reconstruct,
    split,
)
from medsentry._types import (
    ENTITY_ID_BYTES,
    SIGNATURE_BYTES,
    ConfigError,
    EntityId,
    MalformedKeyError,
    ProvisioningError,
)
from medsentry._wire import xor

if TYPE_CHECKING:
    from collections.abc import Iterator
    from pathlib import Path

logger = structlog.get_logger(__name__)

KEYSTORE_FILE = "keystore.csv"
SHARES_FILE = "shares.csv"
DEPLOYMENT_FILE = "deployment.json"
POLICIES_FILE = "policies.jsonl"
CURVE_FILE = "curve.json"
SHARES_PER_ENTITY = 3


class EntityKind(StrEnum):
    """What an entity is in the network model."""

    SENSOR = "sensor"
    USER = "user"
    BASE_STATION = "base_station"
    INFO_SERVER = "info_server"
    REPO_SERVER = "repo_server"


INITIATOR_KINDS = frozenset({EntityKind.SENSOR, EntityKind.USER})


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol knobs shared by every entity in a deployment."""

    freshness_window_ms: int = 2000
    aes: RoundConfig = field(default_factory=RoundConfig)
    digest: Digest = Digest.LLW256
    curve: CurveParams = P256
    threshold: int = DEFAULT_THRESHOLD
    prime: int = PRIME_256
    response_timeout_ms: int = 1000
    release_to_rs: frozenset[str] = frozenset({"action"})


@dataclass(frozen=True)
class EntityRecord:
    """Everything provisioned for one entity."""

    entity_id: EntityId
    kind: EntityKind
    role: str
    keypair: KeyPair
    shares: tuple[Share, ...]

    @property
    def is_initiator(self) -> bool:
        """Sensors and users start sessions; servers only respond."""
        return self.kind in INITIATOR_KINDS


def _pair(a: EntityId, b: EntityId) -> frozenset[EntityId]:
    return frozenset((a, b))


@dataclass(frozen=True)
class KeyRegistry:
    """Read-only view of a provisioned deployment."""

    entities: dict[EntityId, EntityRecord]
    pair_keys: dict[frozenset[EntityId], bytes]
    bs_id: EntityId
    is_id: EntityId
    rs_id: EntityId
    master_signature: bytes
    config: ProtocolConfig = field(default_factory=ProtocolConfig)

    def record(self, entity_id: EntityId) -> EntityRecord:
        """Look up a provisioned entity."""
        try:
            return self.entities[entity_id]
        except KeyError:
            msg = f"entity {entity_id.hex()} is not provisioned"
            raise ProvisioningError(msg) from None

    def knows(self, entity_id: bytes) -> bool:
        """Return whether ``entity_id`` is part of this deployment."""
        return entity_id in self.entities

    def public_key(self, entity_id: EntityId) -> Point:
        """The signing key of ``entity_id``."""
        return self.record(entity_id).keypair.public

    def policy_key(self, *, signing: bool = False) -> StoreKey:
        """IS key for the policy store; the private half only when ``signing``."""
        keypair = self.record(self.is_id).keypair
        return StoreKey(
            public=keypair.public,
            private=keypair.private if signing else None,
            digest=self.config.digest,
            curve=self.config.curve,
        )

    def pair_key(self, a: EntityId, b: EntityId) -> bytes:
        """The AES-192 key shared by the hop ``a <-> b``."""
        try:
            return self.pair_keys[_pair(a, b)]
        except KeyError:
            msg = f"no hop key between {a.hex()} and {b.hex()}"
            raise ProvisioningError(msg) from None

    def initiators(self) -> list[EntityRecord]:
        """Sensors and users in provisioning order."""
        return [r for r in self.entities.values() if r.is_initiator]

    def session_secret(self, initiator: EntityId) -> bytes:
        """``Sec`` for a session started by ``initiator``."""
        return xor(initiator, self.bs_id, self.is_id, self.rs_id)

    def public_key_blob(self) -> bytes:
        """Every public key in provisioning order, the message signed into SS."""
        return b"".join(
            encode_point(r.keypair.public, self.config.curve)
            for r in self.entities.values()
        )

    def master_secret(self) -> MasterSecret:
        """SS as derived from the IS signature over all public keys."""
        return derive_master_secret(self.master_signature, self.config.prime)

    def with_config(self, config: ProtocolConfig) -> KeyRegistry:
        """Same key material under different protocol knobs."""
        return KeyRegistry(
            entities=self.entities,
            pair_keys=self.pair_keys,
            bs_id=self.bs_id,
            is_id=self.is_id,
            rs_id=self.rs_id,
            master_signature=self.master_signature,
            config=config,
        )


def derive_master_secret(signature: bytes, prime: int = PRIME_256) -> MasterSecret:
    """Reduce the digest of the signed key list into the Shamir field."""
    return MasterSecret(int.from_bytes(llw_hash(signature), "big") % prime)


def _nonzero_bytes(rng: random.Random, width: int) -> bytes:
    while True:
        value = rng.randbytes(width)
        if any(value):
            return value


def provision(
    n_sensors: int,
    seed: int,
    *,
    n_users: int = 0,
    config: ProtocolConfig | None = None,
) -> KeyRegistry:
    """Generate a complete deployment deterministically from ``seed``."""
    config = config or ProtocolConfig()
    if n_sensors < 1:
        msg = f"need at least one sensor, got {n_sensors}"
        raise ConfigError("n_sensors", msg)
    if n_users < 0:
        msg = f"user count must not be negative, got {n_users}"
        raise ConfigError("n_users", msg)
    if 2 * config.curve.byte_length != SIGNATURE_BYTES:
        msg = (
            f"{config.curve.name} signatures do not fit "
            f"the {SIGNATURE_BYTES}-byte field"
        )
        raise ConfigError("curve", msg)
    rng = random.Random(seed)  # noqa: S311
    layout = (
        [(EntityKind.SENSOR, "sensor")] * n_sensors
        + [(EntityKind.USER, "user")] * n_users
        + [
            (EntityKind.BASE_STATION, "base_station"),
            (EntityKind.INFO_SERVER, "info_server"),
            (EntityKind.REPO_SERVER, "repo_server"),
        ]
    )
    ids: list[EntityId] = []
    while len(ids) < len(layout):
        candidate = EntityId(_nonzero_bytes(rng, ENTITY_ID_BYTES))
        if candidate not in ids:
            ids.append(candidate)
    keypairs = [keygen(_nonzero_bytes(rng, 32), config.curve) for _ in layout]
    bs_id, is_id, rs_id = ids[-3:]

    blob = b"".join(encode_point(kp.public, config.curve) for kp in keypairs)
    master_signature = sign(keypairs[-2].private, blob, Digest.LLW256, config.curve)
    signature_bytes = master_signature.encode(config.curve)
    secret = derive_master_secret(signature_bytes, config.prime)
    shares = split(
        secret,
        SHARES_PER_ENTITY * len(layout),
        config.threshold,
        rng.randbytes(32),
        config.prime,
    )

    entities: dict[EntityId, EntityRecord] = {}
    for index, ((kind, role), entity_id, keypair) in enumerate(
        zip(layout, ids, keypairs, strict=True)
    ):
        own = shares[SHARES_PER_ENTITY * index : SHARES_PER_ENTITY * (index + 1)]
        entities[entity_id] = EntityRecord(entity_id, kind, role, keypair, tuple(own))

    pair_keys: dict[frozenset[EntityId], bytes] = {}
    for entity_id in ids[:-3]:
        pair_keys[_pair(entity_id, bs_id)] = rng.randbytes(KEY_BYTES)
    pair_keys[_pair(bs_id, is_id)] = rng.randbytes(KEY_BYTES)
    pair_keys[_pair(is_id, rs_id)] = rng.randbytes(KEY_BYTES)

    logger.info(
        "deployment_provisioned",
        sensors=n_sensors,
        users=n_users,
        shares=len(shares),
        threshold=config.threshold,
    )
    return KeyRegistry(
        entities=entities,
        pair_keys=pair_keys,
        bs_id=bs_id,
        is_id=is_id,
        rs_id=rs_id,
        master_signature=signature_bytes,
        config=config,
    )


def _csv_text(header: list[str], rows: Iterator[list[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def save_registry(registry: KeyRegistry, out_dir: Path, *, force: bool = False) -> None:
    """Write keystore, shares and deployment files into ``out_dir``."""
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        msg = f"{out_dir} is not empty; pass force to overwrite"
        raise ProvisioningError(msg)
    curve = registry.config.curve
    records = list(registry.entities.values())
    atomic_write(
        out_dir / KEYSTORE_FILE,
        _csv_text(
            ["entity_id", "private", "public"],
            (
                [
                    r.entity_id.hex(),
                    format(r.keypair.private, "x"),
                    encode_point(r.keypair.public, curve).hex(),
                ]
                for r in records
            ),
        ),
    )
    atomic_write(
        out_dir / SHARES_FILE,
        _csv_text(
            ["entity_id", "x", "y"],
            (
                [r.entity_id.hex(), format(s.x, "x"), format(s.y, "x")]
                for r in records
                for s in r.shares
            ),
        ),
    )
    config = registry.config
    document = {
        "entities": [
            {"entity_id": r.entity_id.hex(), "kind": str(r.kind), "role": r.role}
            for r in records
        ],
        "pair_keys": sorted(
            (sorted(a.hex() for a in pair) + [key.hex()])
            for pair, key in registry.pair_keys.items()
        ),
        "master_signature": registry.master_signature.hex(),
        "config": {
            "freshness_window_ms": config.freshness_window_ms,
            "aes_rounds": config.aes.rounds,
            "digest": str(config.digest),
            "threshold": config.threshold,
            "response_timeout_ms": config.response_timeout_ms,
            "release_to_rs": sorted(config.release_to_rs),
        },
    }
    atomic_write(
        out_dir / DEPLOYMENT_FILE, json.dumps(document, indent=2, sort_keys=True) + "\n"
    )
    atomic_write(
        out_dir / CURVE_FILE,
        json.dumps(curve_document(curve), indent=2, sort_keys=True) + "\n",
    )
    InfoStore(
        [
            InfoRecord(entity_id=r.entity_id.hex(), kind=r.kind.value, role=r.role)
            for r in records
        ]
    ).save(out_dir / IS_STORE_FILE)


def _read_csv(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        msg = f"missing {path.name} in {path.parent}"
        raise ProvisioningError(msg)
    with path.open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def load_registry(directory: Path) -> KeyRegistry:
    """Reload a deployment written by :func:`save_registry` and check it."""
    deployment_path = directory / DEPLOYMENT_FILE
    if not deployment_path.exists():
        msg = f"missing {DEPLOYMENT_FILE} in {directory}"
        raise ProvisioningError(msg)
    if not (directory / CURVE_FILE).exists():
        msg = f"missing {CURVE_FILE} in {directory}"
        raise ProvisioningError(msg)
    try:
        document = json.loads(deployment_path.read_text(encoding="utf-8"))
        raw_config = document["config"]
        config = ProtocolConfig(
            freshness_window_ms=int(raw_config["freshness_window_ms"]),
            aes=RoundConfig(int(raw_config["aes_rounds"])),
            digest=Digest(raw_config["digest"]),
            curve=load_curve(directory / CURVE_FILE),
            threshold=int(raw_config["threshold"]),
            response_timeout_ms=int(raw_config["response_timeout_ms"]),
            release_to_rs=frozenset(raw_config["release_to_rs"]),
        )
        keys = {
            row["entity_id"]: row for row in _read_csv(directory / KEYSTORE_FILE)
        }
        shares: dict[str, list[Share]] = {}
        for row in _read_csv(directory / SHARES_FILE):
            shares.setdefault(row["entity_id"], []).append(
                Share(int(row["x"], 16), int(row["y"], 16))
            )
        entities: dict[EntityId, EntityRecord] = {}
        for item in document["entities"]:
            hex_id = item["entity_id"]
            entity_id = EntityId(bytes.fromhex(hex_id))
            key_row = keys[hex_id]
            keypair = KeyPair(
                private=int(key_row["private"], 16),
                public=decode_point(bytes.fromhex(key_row["public"]), config.curve),
            )
            entities[entity_id] = EntityRecord(
                entity_id,
                EntityKind(item["kind"]),
                item["role"],
                keypair,
                tuple(shares.get(hex_id, ())),
            )
        pair_keys = {
            _pair(EntityId(bytes.fromhex(a)), EntityId(bytes.fromhex(b))): (
                bytes.fromhex(key)
            )
            for a, b, key in document["pair_keys"]
        }
        master_signature = bytes.fromhex(document["master_signature"])
    except (KeyError, ValueError, TypeError, MalformedKeyError) as exc:
        msg = f"deployment in {directory} is inconsistent: {exc}"
        raise ProvisioningError(msg) from exc

    by_kind = {r.kind: r.entity_id for r in entities.values()}
    missing = {
        EntityKind.BASE_STATION,
        EntityKind.INFO_SERVER,
        EntityKind.REPO_SERVER,
    } - by_kind.keys()
    if missing:
        msg = f"deployment lacks {sorted(missing)}"
        raise ProvisioningError(msg)
    registry = KeyRegistry(
        entities=entities,
        pair_keys=pair_keys,
        bs_id=by_kind[EntityKind.BASE_STATION],
        is_id=by_kind[EntityKind.INFO_SERVER],
        rs_id=by_kind[EntityKind.REPO_SERVER],
        master_signature=master_signature,
        config=config,
    )
    check_registry(registry)
    return registry


def check_registry(registry: KeyRegistry) -> None:
    """Verify the signed master secret and every entity's shares."""
    config = registry.config
    signature = SignatureRS.decode(registry.master_signature, config.curve)
    if not verify(
        registry.public_key(registry.is_id),
        registry.public_key_blob(),
        signature,
        Digest.LLW256,
        config.curve,
    ):
        msg = "master secret signature does not verify under the IS key"
        raise ProvisioningError(msg)
    expected = registry.master_secret()
    for record in registry.entities.values():
        if len(record.shares) < config.threshold:
            msg = f"entity {record.entity_id.hex()} holds {len(record.shares)} shares"
            raise ProvisioningError(msg)
        if reconstruct(record.shares, config.threshold, config.prime) != expected:
            msg = f"shares of {record.entity_id.hex()} do not reconstruct SS"
            raise ProvisioningError(msg)

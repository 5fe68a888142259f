"""medsentry: signed, policy-checked authorization for health sensor networks."""

from medsentry._aes import RoundConfig, decrypt_payload, encrypt_payload
from medsentry._bench import BenchResult, bench, bench_all
from medsentry._ecdsa import KeyPair, SignatureRS, keygen, sign, verify
from medsentry._entities import (
    Accept,
    BaseStation,
    InfoServer,
    Reject,
    RepoServer,
    Sensor,
    SessionResult,
)
from medsentry._hashing import Digest, llw_hash, sha1_hash
from medsentry._metrics import Metrics, metrics_csv, render_report
from medsentry._netsim import Simulation, run, run_many
from medsentry._policy import (
    AccessCounter,
    Action,
    PolicyRule,
    StoreKey,
    Weekday,
    evaluate,
    load_store,
    save_store,
)
from medsentry._registry import (
    KeyRegistry,
    ProtocolConfig,
    load_registry,
    provision,
    save_registry,
)
from medsentry._saml import SamlRequest, SamlResponse, parse_request, serialize_request
from medsentry._scenario import AttackKind, Scenario, SimConfig, load_scenario
from medsentry._shamir import MasterSecret, Share, reconstruct, split
from medsentry._topology import NodeKind, Topology
from medsentry._types import (
    ConfigError,
    Decision,
    DegenerateShareError,
    InsufficientSharesError,
    LengthOverflowError,
    MalformedKeyError,
    MedSentryError,
    ParameterError,
    PolicyValidationError,
    ProvisioningError,
    RejectError,
    RejectReason,
    SamlParseError,
    UnreachableError,
    WidthError,
)

__all__ = [
    "AccessCounter",
    "Accept",
    "Action",
    "AttackKind",
    "BaseStation",
    "BenchResult",
    "ConfigError",
    "Decision",
    "DegenerateShareError",
    "Digest",
    "InfoServer",
    "InsufficientSharesError",
    "KeyPair",
    "KeyRegistry",
    "LengthOverflowError",
    "MalformedKeyError",
    "MasterSecret",
    "MedSentryError",
    "Metrics",
    "NodeKind",
    "ParameterError",
    "PolicyRule",
    "PolicyValidationError",
    "ProtocolConfig",
    "ProvisioningError",
    "Reject",
    "RejectError",
    "RejectReason",
    "RepoServer",
    "RoundConfig",
    "SamlParseError",
    "SamlRequest",
    "SamlResponse",
    "Scenario",
    "Sensor",
    "SessionResult",
    "Share",
    "SignatureRS",
    "SimConfig",
    "Simulation",
    "StoreKey",
    "Topology",
    "UnreachableError",
    "Weekday",
    "WidthError",
    "bench",
    "bench_all",
    "decrypt_payload",
    "encrypt_payload",
    "evaluate",
    "keygen",
    "llw_hash",
    "load_registry",
    "load_scenario",
    "load_store",
    "metrics_csv",
    "parse_request",
    "provision",
    "reconstruct",
    "render_report",
    "run",
    "run_many",
    "save_registry",
    "save_store",
    "serialize_request",
    "sha1_hash",
    "sign",
    "split",
    "verify",
]

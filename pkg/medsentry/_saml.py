"""Canonical SAML-style authorization request and response documents.

Documents carry no namespace, no declaration and no whitespace between
elements. Binary fields are lowercase hex, timestamps are decimal
milliseconds. Parsing re-serializes the result and refuses any input that is
not byte-identical to its canonical form.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import TYPE_CHECKING

from lxml import etree

from medsentry._types import (
    ENTITY_ID_BYTES,
    MASKED_BYTES,
    NONCE_BYTES,
    Decision,
    EntityId,
    SamlParseError,
    Timestamp,
    WidthError,
)

if TYPE_CHECKING:
    from collections.abc import Collection, Iterable

REQUEST_ROOT = "AuthzRequest"
RESPONSE_ROOT = "AuthzResponse"
REQUEST_ELEMENTS = (
    "RequestID",
    "Issuer",
    "Subject",
    "Vtm",
    "IssueInstant",
    "Attributes",
)
RESPONSE_ELEMENTS = ("InResponseTo", "Issuer", "IssueInstant", "Decision")
_MAX_TIMESTAMP = 1 << 64

_PARSER = etree.XMLParser(
    resolve_entities=False,
    no_network=True,
    remove_blank_text=False,
    huge_tree=False,
)


@dataclass(frozen=True)
class SamlRequest:
    """An authorization request document."""

    request_id: bytes
    issuer: EntityId
    subject: EntityId
    v_tm: bytes
    issue_instant: Timestamp
    attributes: tuple[tuple[str, str], ...] = ()

    def attribute(self, name: str) -> str | None:
        """Return the first value recorded for ``name``."""
        for key, value in self.attributes:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class SamlResponse:
    """A responder's decision on a request, bound to the request id."""

    in_response_to: bytes
    issuer: EntityId
    issue_instant: Timestamp
    decision: Decision


def _check_width(name: str, value: bytes, width: int) -> None:
    if len(value) != width:
        msg = f"{name} must be {width} bytes, got {len(value)}"
        raise WidthError(msg)


def _check_timestamp(value: int) -> None:
    if not 0 <= value < _MAX_TIMESTAMP:
        msg = f"timestamp {value} does not fit 64 bits"
        raise WidthError(msg)


def create_request(  # noqa: PLR0913
    issuer: EntityId,
    subject: EntityId,
    v_tm: bytes,
    now: Timestamp,
    attrs: Iterable[tuple[str, str]] = (),
    *,
    request_id: bytes | None = None,
) -> SamlRequest:
    """Populate a request; ``request_id`` defaults to 128 fresh random bits."""
    request_id = secrets.token_bytes(NONCE_BYTES) if request_id is None else request_id
    _check_width("request_id", request_id, NONCE_BYTES)
    _check_width("issuer", issuer, ENTITY_ID_BYTES)
    _check_width("subject", subject, ENTITY_ID_BYTES)
    _check_width("v_tm", v_tm, MASKED_BYTES)
    _check_timestamp(now)
    return SamlRequest(
        request_id=request_id,
        issuer=issuer,
        subject=subject,
        v_tm=v_tm,
        issue_instant=now,
        attributes=tuple(attrs),
    )


def _child(parent: etree._Element, tag: str, text: str) -> None:
    etree.SubElement(parent, tag).text = text


def serialize_request(
    req: SamlRequest, *, release: Collection[str] | None = None
) -> bytes:
    """Render ``req`` canonically.

    ``release`` is an attribute-name allowlist; attributes outside it are left
    out of the document. ``None`` releases everything.
    """
    root = etree.Element(REQUEST_ROOT)
    _child(root, "RequestID", req.request_id.hex())
    _child(root, "Issuer", req.issuer.hex())
    _child(root, "Subject", req.subject.hex())
    _child(root, "Vtm", req.v_tm.hex())
    _child(root, "IssueInstant", str(req.issue_instant))
    attributes = etree.SubElement(root, "Attributes")
    for name, value in req.attributes:
        if release is not None and name not in release:
            continue
        etree.SubElement(attributes, "Attribute", Name=name).text = value
    return etree.tostring(root)


def serialize_response(resp: SamlResponse) -> bytes:
    """Render ``resp`` canonically."""
    root = etree.Element(RESPONSE_ROOT)
    _child(root, "InResponseTo", resp.in_response_to.hex())
    _child(root, "Issuer", resp.issuer.hex())
    _child(root, "IssueInstant", str(resp.issue_instant))
    _child(root, "Decision", str(resp.decision))
    return etree.tostring(root)


def _load(data: bytes, root_tag: str, expected: tuple[str, ...]) -> etree._Element:
    try:
        root = etree.fromstring(data, _PARSER)
    except etree.XMLSyntaxError as exc:
        raise SamlParseError(root_tag, f"not well-formed: {exc}") from exc
    if root.tag != root_tag:
        raise SamlParseError(str(root.tag), f"expected root <{root_tag}>")
    children = list(root)
    for index, tag in enumerate(expected):
        if index >= len(children):
            raise SamlParseError(tag, "missing")
        if children[index].tag != tag:
            raise SamlParseError(tag, f"out of order, found <{children[index].tag}>")
    if len(children) > len(expected):
        raise SamlParseError(str(children[len(expected)].tag), "unexpected element")
    return root


def _hex(element: etree._Element, width: int) -> bytes:
    text = element.text or ""
    if len(text) != 2 * width or text != text.lower():
        raise SamlParseError(
            str(element.tag), f"expected {2 * width} lowercase hex digits"
        )
    try:
        return bytes.fromhex(text)
    except ValueError as exc:
        raise SamlParseError(str(element.tag), "invalid hex") from exc


def _timestamp(element: etree._Element) -> Timestamp:
    text = element.text or ""
    if not text.isascii() or not text.isdigit():
        raise SamlParseError(str(element.tag), "expected decimal milliseconds")
    value = int(text)
    if value >= _MAX_TIMESTAMP:
        raise SamlParseError(str(element.tag), "timestamp does not fit 64 bits")
    return Timestamp(value)


def _require_canonical(data: bytes, canonical: bytes, root_tag: str) -> None:
    if data != canonical:
        raise SamlParseError(root_tag, "document is not in canonical form")


def parse_request(data: bytes) -> SamlRequest:
    """Inverse of :func:`serialize_request`."""
    root = _load(data, REQUEST_ROOT, REQUEST_ELEMENTS)
    request_id, issuer, subject, v_tm, instant, attributes = list(root)
    pairs: list[tuple[str, str]] = []
    for attribute in attributes:
        name = attribute.get("Name")
        if attribute.tag != "Attribute" or name is None:
            raise SamlParseError(str(attribute.tag), "expected <Attribute Name=...>")
        pairs.append((name, attribute.text or ""))
    req = SamlRequest(
        request_id=_hex(request_id, NONCE_BYTES),
        issuer=EntityId(_hex(issuer, ENTITY_ID_BYTES)),
        subject=EntityId(_hex(subject, ENTITY_ID_BYTES)),
        v_tm=_hex(v_tm, MASKED_BYTES),
        issue_instant=_timestamp(instant),
        attributes=tuple(pairs),
    )
    _require_canonical(data, serialize_request(req), REQUEST_ROOT)
    return req


def parse_response(data: bytes) -> SamlResponse:
    """Inverse of :func:`serialize_response`."""
    root = _load(data, RESPONSE_ROOT, RESPONSE_ELEMENTS)
    in_response_to, issuer, instant, decision = list(root)
    try:
        outcome = Decision(decision.text or "")
    except ValueError as exc:
        raise SamlParseError("Decision", f"unknown decision {decision.text!r}") from exc
    resp = SamlResponse(
        in_response_to=_hex(in_response_to, NONCE_BYTES),
        issuer=EntityId(_hex(issuer, ENTITY_ID_BYTES)),
        issue_instant=_timestamp(instant),
        decision=outcome,
    )
    _require_canonical(data, serialize_response(resp), RESPONSE_ROOT)
    return resp

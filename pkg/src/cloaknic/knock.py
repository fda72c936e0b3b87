"""Sealing and opening knock payloads.

A knock is a single 46-byte authenticated record carried in ICMP:

    magic "KNCK" (4) | version 0x01 (1) | flags 0x00 (1) | nonce (8) |
    ciphertext (16) | tag (16)

Plaintext block: client_ip(4) || client_port(2) || 0x0000 || timestamp(8),
all big-endian. Keystream = HMAC-SHA-256(key, nonce || 0x01)[:16],
tag = HMAC-SHA-256(key, magic || version || flags || nonce || ciphertext)[:16]
(encrypt-then-MAC; the tag is checked before any plaintext is touched).

Freshness: a knock is fresh while |now - timestamp| <= freshness_seconds.
Replay: an accepted nonce is rejected on re-presentation until it ages out
of the replay window (eviction removes entries strictly older than the
window).
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Union

from .frames import Ipv4Address

KNOCK_MAGIC = b"KNCK"
KNOCK_VERSION = 1
KNOCK_FLAGS = 0
NONCE_LEN = 8
CIPHERTEXT_LEN = 16
TAG_LEN = 16
PAYLOAD_LEN = 4 + 1 + 1 + NONCE_LEN + CIPHERTEXT_LEN + TAG_LEN  # 46
KEY_LEN = 32

DEFAULT_FRESHNESS_SECONDS = 30
DEFAULT_REPLAY_WINDOW_SECONDS = 60


class RejectReason(Enum):
    BAD_LENGTH = "BadLength"
    BAD_MAGIC = "BadMagic"
    BAD_VERSION = "BadVersion"
    BAD_TAG = "BadTag"
    STALE = "Stale"
    REPLAYED = "Replayed"


@dataclass(frozen=True)
class SharedKey:
    key_bytes: bytes

    def __post_init__(self):
        if len(self.key_bytes) != KEY_LEN:
            raise ValueError(f"shared key must be {KEY_LEN} bytes, got {len(self.key_bytes)}")

    @classmethod
    def from_hex(cls, text: str) -> "SharedKey":
        return cls(bytes.fromhex(text))


@dataclass(frozen=True)
class KnockFields:
    client_ip: Ipv4Address
    client_port: int
    timestamp: int

    def __post_init__(self):
        if not 1 <= self.client_port <= 0xFFFF:
            raise ValueError("client_port must be in [1, 65535]")
        if not 0 <= self.timestamp < 1 << 64:
            raise ValueError("timestamp must fit in 64 bits")

    def to_plaintext(self) -> bytes:
        return (
            self.client_ip.octets
            + self.client_port.to_bytes(2, "big")
            + b"\x00\x00"
            + self.timestamp.to_bytes(8, "big")
        )

    @classmethod
    def from_plaintext(cls, block: bytes) -> "KnockFields":
        return cls(
            client_ip=Ipv4Address(block[:4]),
            client_port=int.from_bytes(block[4:6], "big"),
            timestamp=int.from_bytes(block[8:16], "big"),
        )


@dataclass(frozen=True)
class KnockPayload:
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return (
            KNOCK_MAGIC
            + bytes([KNOCK_VERSION, KNOCK_FLAGS])
            + self.nonce
            + self.ciphertext
            + self.tag
        )


@dataclass
class ReplayCache:
    """Windowed set of accepted nonces, owned by a single NIC."""

    window_seconds: int = DEFAULT_REPLAY_WINDOW_SECONDS
    seen: Dict[bytes, int] = field(default_factory=dict)

    def contains(self, nonce: bytes) -> bool:
        return nonce in self.seen

    def record(self, nonce: bytes, now: int) -> None:
        self.seen[nonce] = now

    def __len__(self) -> int:
        return len(self.seen)


def prf(key: SharedKey, message: bytes) -> bytes:
    """HMAC-SHA-256; the cross-implementation interop anchor."""
    return hmac.new(key.key_bytes, message, hashlib.sha256).digest()


def seal_knock(key: SharedKey, nonce: bytes, fields: KnockFields) -> KnockPayload:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    plaintext = fields.to_plaintext()
    keystream = prf(key, nonce + b"\x01")[:CIPHERTEXT_LEN]
    ciphertext = bytes(p ^ k for p, k in zip(plaintext, keystream))
    header = KNOCK_MAGIC + bytes([KNOCK_VERSION, KNOCK_FLAGS])
    tag = prf(key, header + nonce + ciphertext)[:TAG_LEN]
    return KnockPayload(nonce, ciphertext, tag)


def open_knock(
    key: SharedKey,
    payload: bytes,
    now: int,
    cache: ReplayCache,
    freshness_seconds: int = DEFAULT_FRESHNESS_SECONDS,
) -> Union[KnockFields, RejectReason]:
    """Validate a candidate knock; every failure is a silent typed rejection.

    The tag covers header, nonce and ciphertext and is verified before
    any plaintext field is read. A successful open records the nonce.
    """
    if len(payload) != PAYLOAD_LEN:
        return RejectReason.BAD_LENGTH
    if payload[:4] != KNOCK_MAGIC:
        return RejectReason.BAD_MAGIC
    if payload[4] != KNOCK_VERSION:
        return RejectReason.BAD_VERSION
    nonce = payload[6:6 + NONCE_LEN]
    ciphertext = payload[14:14 + CIPHERTEXT_LEN]
    tag = payload[30:30 + TAG_LEN]
    expected = prf(key, payload[:30])[:TAG_LEN]
    if not hmac.compare_digest(tag, expected):
        return RejectReason.BAD_TAG
    keystream = prf(key, nonce + b"\x01")[:CIPHERTEXT_LEN]
    fields = KnockFields.from_plaintext(bytes(c ^ k for c, k in zip(ciphertext, keystream)))
    if abs(now - fields.timestamp) > freshness_seconds:
        return RejectReason.STALE
    if cache.contains(nonce):
        return RejectReason.REPLAYED
    cache.record(nonce, now)
    return fields


def cache_evict(cache: ReplayCache, now: int) -> ReplayCache:
    """Drop entries strictly older than the window; idempotent."""
    cache.seen = {n: t for n, t in cache.seen.items() if now - t <= cache.window_seconds}
    return cache


def is_knock_payload(data: bytes) -> bool:
    """Knock recognition: KNCK magic at offset 0 of the ICMP payload."""
    return data[:4] == KNOCK_MAGIC


def format_vector_line(key: SharedKey, nonce: bytes, fields: KnockFields) -> str:
    """`<key-hex> <nonce-hex> <ip> <port> <timestamp> <payload-hex>`"""
    payload = seal_knock(key, nonce, fields).to_bytes()
    return (
        f"{key.key_bytes.hex()} {nonce.hex()} {fields.client_ip} "
        f"{fields.client_port} {fields.timestamp} {payload.hex()}"
    )


def parse_vector_line(line: str) -> tuple[SharedKey, bytes, KnockFields, bytes]:
    key_hex, nonce_hex, ip, port, ts, payload_hex = line.split()
    return (
        SharedKey.from_hex(key_hex),
        bytes.fromhex(nonce_hex),
        KnockFields(Ipv4Address.from_str(ip), int(port), int(ts)),
        bytes.fromhex(payload_hex),
    )

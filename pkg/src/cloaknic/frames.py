"""Byte-exact Ethernet II / ARP / IPv4 / ICMP / TCP-UDP-view codec.

Everything here is a pure function over immutable values: parse, build,
serialize. Big-endian throughout. FCS is not modeled; neither is the
46-byte minimum-payload padding rule (no physical medium exists here).
Unknown ethertypes and IP protocols decode to opaque bytes on purpose --
rejecting them is the packet filter's job, not the parser's.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Union

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

ARP_REQUEST = 1
ARP_REPLY = 2

ICMP_ECHO_REQUEST = 8
ICMP_ECHO_REPLY = 0

TCP_FLAG_SYN = 0x02
TCP_FLAG_ACK = 0x10
TCP_FLAG_RST = 0x04

ETH_HEADER_LEN = 14
MAX_PAYLOAD = 1500
MAX_FRAME = ETH_HEADER_LEN + MAX_PAYLOAD  # 1514, FCS excluded


class FrameError(Exception):
    """Base class for codec failures."""


class TooShort(FrameError):
    """Input shorter than the fixed header it claims to carry."""


class BadChecksum(FrameError):
    """IPv4 or ICMP checksum mismatch; the NIC drops such frames silently."""


class Oversize(FrameError):
    """Ethernet payload above 1500 bytes."""


@dataclass(frozen=True)
class MacAddress:
    octets: bytes

    def __post_init__(self):
        if len(self.octets) != 6:
            raise ValueError("MAC address must be exactly 6 octets")

    @classmethod
    def from_str(cls, text: str) -> "MacAddress":
        parts = text.split(":")
        if len(parts) != 6:
            raise ValueError(f"bad MAC address {text!r}")
        return cls(bytes(int(p, 16) for p in parts))

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self.octets)


MAC_BROADCAST = MacAddress(b"\xff" * 6)
MAC_ZERO = MacAddress(b"\x00" * 6)


@dataclass(frozen=True)
class Ipv4Address:
    octets: bytes

    def __post_init__(self):
        if len(self.octets) != 4:
            raise ValueError("IPv4 address must be exactly 4 octets")

    @classmethod
    def from_str(cls, text: str) -> "Ipv4Address":
        parts = text.split(".")
        if len(parts) != 4 or not all(p.isdigit() and 0 <= int(p) <= 255 for p in parts):
            raise ValueError(f"bad IPv4 address {text!r}")
        return cls(bytes(int(p) for p in parts))

    def __str__(self) -> str:
        return ".".join(str(b) for b in self.octets)


@dataclass(frozen=True)
class ArpPacket:
    """Fixed-size ARP body: htype 1, ptype 0x0800, hlen 6, plen 4 (28 bytes)."""

    operation: int  # ARP_REQUEST or ARP_REPLY
    sender_mac: MacAddress
    sender_ip: Ipv4Address
    target_mac: MacAddress
    target_ip: Ipv4Address

    BODY_LEN = 28

    def to_bytes(self) -> bytes:
        return (
            struct.pack(">HHBBH", 1, ETHERTYPE_IPV4, 6, 4, self.operation)
            + self.sender_mac.octets
            + self.sender_ip.octets
            + self.target_mac.octets
            + self.target_ip.octets
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ArpPacket":
        if len(data) < cls.BODY_LEN:
            raise TooShort(f"ARP body is {len(data)} bytes, need 28")
        _htype, _ptype, _hlen, _plen, op = struct.unpack(">HHBBH", data[:8])
        return cls(
            operation=op,
            sender_mac=MacAddress(data[8:14]),
            sender_ip=Ipv4Address(data[14:18]),
            target_mac=MacAddress(data[18:24]),
            target_ip=Ipv4Address(data[24:28]),
        )


def internet_checksum(data: bytes) -> int:
    """RFC 1071 Internet checksum over ``data`` (odd length zero-padded).

    Returns the one's-complement of the one's-complement 16-bit word sum,
    so a buffer that already carries a correct checksum sums to 0xFFFF.
    """
    if len(data) % 2:
        data = data + b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


@dataclass(frozen=True)
class IcmpMessage:
    icmp_type: int
    code: int
    identifier: int
    sequence: int
    payload: bytes = b""
    checksum: int = 0  # filled on serialization

    def header_and_payload(self, checksum: int) -> bytes:
        return (
            struct.pack(">BBHHH", self.icmp_type, self.code, checksum, self.identifier, self.sequence)
            + self.payload
        )

    def to_bytes(self) -> bytes:
        cks = internet_checksum(self.header_and_payload(0))
        return self.header_and_payload(cks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "IcmpMessage":
        if len(data) < 8:
            raise TooShort(f"ICMP message is {len(data)} bytes, need 8")
        icmp_type, code, cks, ident, seq = struct.unpack(">BBHHH", data[:8])
        if internet_checksum(data) != 0:
            raise BadChecksum("ICMP checksum mismatch")
        return cls(icmp_type, code, ident, seq, data[8:], cks)


@dataclass(frozen=True)
class TransportView:
    """Port-level view of a TCP or UDP payload; no deeper state is tracked."""

    src_port: int
    dst_port: int
    kind: str  # "tcp" or "udp"
    is_syn: bool
    raw: bytes


@dataclass(frozen=True)
class Ipv4Packet:
    """IPv4 with IHL fixed at 5; no options or fragments are modeled."""

    src: Ipv4Address
    dst: Ipv4Address
    protocol: int
    payload: Union[IcmpMessage, bytes] = b""
    ttl: int = 64
    identification: int = 0
    header_checksum: int = 0  # filled on serialization

    HEADER_LEN = 20

    def payload_bytes(self) -> bytes:
        if isinstance(self.payload, IcmpMessage):
            return self.payload.to_bytes()
        return self.payload

    def to_bytes(self) -> bytes:
        body = self.payload_bytes()
        total = self.HEADER_LEN + len(body)
        head = struct.pack(
            ">BBHHHBBH4s4s",
            0x45, 0, total, self.identification, 0, self.ttl, self.protocol,
            0, self.src.octets, self.dst.octets,
        )
        cks = internet_checksum(head)
        head = head[:10] + struct.pack(">H", cks) + head[12:]
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ipv4Packet":
        if len(data) < cls.HEADER_LEN:
            raise TooShort(f"IPv4 packet is {len(data)} bytes, need 20")
        (vihl, _tos, total, ident, _frag, ttl, proto, cks, src, dst) = struct.unpack(
            ">BBHHHBBH4s4s", data[: cls.HEADER_LEN]
        )
        if internet_checksum(data[: cls.HEADER_LEN]) != 0:
            raise BadChecksum("IPv4 header checksum mismatch")
        body = data[cls.HEADER_LEN:total] if total >= cls.HEADER_LEN else data[cls.HEADER_LEN:]
        payload: Union[IcmpMessage, bytes] = body
        if proto == PROTO_ICMP and len(body) >= 8:
            payload = IcmpMessage.from_bytes(body)
        return cls(
            src=Ipv4Address(src),
            dst=Ipv4Address(dst),
            protocol=proto,
            payload=payload,
            ttl=ttl,
            identification=ident,
            header_checksum=cks,
        )

    def transport_view(self) -> Optional[TransportView]:
        if isinstance(self.payload, IcmpMessage):
            return None
        raw = self.payload
        if self.protocol == PROTO_TCP and len(raw) >= 20:
            src_port, dst_port = struct.unpack(">HH", raw[:4])
            flags = raw[13]
            return TransportView(src_port, dst_port, "tcp", bool(flags & TCP_FLAG_SYN), raw)
        if self.protocol == PROTO_UDP and len(raw) >= 8:
            src_port, dst_port = struct.unpack(">HH", raw[:4])
            return TransportView(src_port, dst_port, "udp", False, raw)
        return None


@dataclass(frozen=True)
class EthernetFrame:
    dst: MacAddress
    src: MacAddress
    ethertype: int
    payload: Union[ArpPacket, Ipv4Packet, bytes] = b""


def serialize_frame(frame: EthernetFrame) -> bytes:
    """Canonical big-endian bytes; IPv4/ICMP checksums are recomputed."""
    if isinstance(frame.payload, ArpPacket):
        body = frame.payload.to_bytes()
    elif isinstance(frame.payload, Ipv4Packet):
        body = frame.payload.to_bytes()
    else:
        body = frame.payload
    if len(body) > MAX_PAYLOAD:
        raise Oversize(f"payload is {len(body)} bytes, max {MAX_PAYLOAD}")
    return frame.dst.octets + frame.src.octets + struct.pack(">H", frame.ethertype) + body


def parse_frame(wire: bytes) -> EthernetFrame:
    """Decode a frame into typed payloads; unknown protocols stay opaque bytes."""
    if len(wire) < ETH_HEADER_LEN:
        raise TooShort(f"frame is {len(wire)} bytes, need 14")
    dst = MacAddress(wire[:6])
    src = MacAddress(wire[6:12])
    (ethertype,) = struct.unpack(">H", wire[12:14])
    body = wire[14:]
    payload: Union[ArpPacket, Ipv4Packet, bytes] = body
    if ethertype == ETHERTYPE_ARP and len(body) >= ArpPacket.BODY_LEN:
        payload = ArpPacket.from_bytes(body)
    elif ethertype == ETHERTYPE_IPV4 and len(body) >= Ipv4Packet.HEADER_LEN:
        payload = Ipv4Packet.from_bytes(body)
    return EthernetFrame(dst, src, ethertype, payload)


def make_arp(
    operation: int,
    sender_mac: MacAddress,
    sender_ip: Ipv4Address,
    target_mac: MacAddress,
    target_ip: Ipv4Address,
) -> EthernetFrame:
    """ARP request frames are broadcast; replies go unicast to the requester."""
    arp = ArpPacket(operation, sender_mac, sender_ip, target_mac, target_ip)
    if operation == ARP_REQUEST:
        arp = ArpPacket(operation, sender_mac, sender_ip, MAC_ZERO, target_ip)
        eth_dst = MAC_BROADCAST
    else:
        eth_dst = target_mac
    return EthernetFrame(eth_dst, sender_mac, ETHERTYPE_ARP, arp)


def tcp_segment(src_port: int, dst_port: int, flags: int = TCP_FLAG_SYN,
                seq: int = 0, ack: int = 0, data: bytes = b"") -> bytes:
    """Minimal 20-byte TCP header (data offset 5) plus optional data.

    The TCP checksum is left zero: the filter reads only ports and flags.
    """
    head = struct.pack(">HHIIBBHHH", src_port, dst_port, seq, ack, 5 << 4, flags, 0xFFFF, 0, 0)
    return head + data


def udp_datagram(src_port: int, dst_port: int, data: bytes = b"") -> bytes:
    return struct.pack(">HHHH", src_port, dst_port, 8 + len(data), 0) + data


def make_ipv4_frame(src_mac: MacAddress, dst_mac: MacAddress,
                    src_ip: Ipv4Address, dst_ip: Ipv4Address,
                    protocol: int, payload: Union[IcmpMessage, bytes],
                    identification: int = 0, ttl: int = 64) -> EthernetFrame:
    pkt = Ipv4Packet(src_ip, dst_ip, protocol, payload, ttl, identification)
    # bake in the checksums so the frame compares equal after a round trip
    return parse_frame(serialize_frame(EthernetFrame(dst_mac, src_mac, ETHERTYPE_IPV4, pkt)))


def make_icmp_echo(src_mac: MacAddress, dst_mac: MacAddress,
                   src_ip: Ipv4Address, dst_ip: Ipv4Address,
                   payload: bytes = b"", identifier: int = 0, sequence: int = 0,
                   reply: bool = False) -> EthernetFrame:
    icmp = IcmpMessage(ICMP_ECHO_REPLY if reply else ICMP_ECHO_REQUEST, 0, identifier, sequence, payload)
    return make_ipv4_frame(src_mac, dst_mac, src_ip, dst_ip, PROTO_ICMP, icmp)


def hex_dump(data: bytes) -> str:
    """Lowercase hex pairs, space separated, 16 bytes per line."""
    lines = []
    for off in range(0, len(data), 16):
        lines.append(" ".join(f"{b:02x}" for b in data[off:off + 16]))
    return "\n".join(lines)

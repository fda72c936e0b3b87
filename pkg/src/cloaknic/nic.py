"""The cloaking NIC state machine.

Default-drop packet filter keyed on <source IP, source port>, stateless
ARP responder for the NIC's own IP, knock validation with replay cache,
bounded rx/tx FIFOs, and client-side automatic knock generation. A NIC
never emits anything toward an unauthenticated peer except the ARP reply
for its own address; every other rejection is silent.

One instance is a single-threaded state machine; all cross-NIC traffic
goes through the simulator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple, Union

from . import frames
from .frames import (
    ARP_REPLY,
    ARP_REQUEST,
    ETHERTYPE_IPV4,
    MAC_BROADCAST,
    MAC_ZERO,
    PROTO_ICMP,
    ArpPacket,
    EthernetFrame,
    IcmpMessage,
    Ipv4Address,
    Ipv4Packet,
    MacAddress,
    parse_frame,
    serialize_frame,
)
from .knock import (
    DEFAULT_FRESHNESS_SECONDS,
    DEFAULT_REPLAY_WINDOW_SECONDS,
    KnockFields,
    RejectReason,
    ReplayCache,
    SharedKey,
    cache_evict,
    is_knock_payload,
    open_knock,
    seal_knock,
)

FIFO_CAPACITY = 3036  # two maximum-size (1518 byte) Ethernet packets
FILTER_TABLE_CAP = 1024
DEFAULT_FILTER_TTL_SECONDS = 60


class NicError(Exception):
    pass


class MissingIp(NicError):
    """The host must set the NIC's IP before any frame is processed."""


class UnknownPeerKey(NicError):
    """Transmit to a protected peer with no shared key configured."""


class TableFull(NicError):
    """Filter table at capacity; new knocks are rejected, never evicted."""


class DropReason(Enum):
    NO_FILTER_MATCH = "NoFilterMatch"
    BAD_KNOCK = "BadKnock"
    UNSOLICITED_ARP_REPLY = "UnsolicitedArpReply"
    FIFO_OVERFLOW = "FifoOverflow"
    MALFORMED = "Malformed"


@dataclass(frozen=True)
class DropRecord:
    reason: DropReason
    stage_count: int
    detail: Optional[str] = None


@dataclass(frozen=True)
class ArpCacheUpdate:
    """Emitted only from a validated knock, never from wire ARP traffic."""

    ip: Ipv4Address
    mac: MacAddress


@dataclass(frozen=True)
class Delivered:
    frame: EthernetFrame
    stage_count: int = 2


@dataclass(frozen=True)
class LinkStats:
    counters: Dict[str, int]


HostEvent = Union[ArpCacheUpdate, Delivered, LinkStats]


@dataclass
class Actions:
    """Per-call outcome: every input frame lands in exactly one bucket."""

    tx_frames: List[EthernetFrame] = field(default_factory=list)
    host_events: List[HostEvent] = field(default_factory=list)
    drops: List[DropRecord] = field(default_factory=list)


@dataclass
class NicConfig:
    mac: MacAddress
    ip: Optional[Ipv4Address] = None
    role_keys: Dict[Ipv4Address, SharedKey] = field(default_factory=dict)
    protected_peers: Set[Ipv4Address] = field(default_factory=set)
    freshness_seconds: int = DEFAULT_FRESHNESS_SECONDS
    filter_ttl_seconds: int = DEFAULT_FILTER_TTL_SECONDS
    replay_window_seconds: int = DEFAULT_REPLAY_WINDOW_SECONDS
    nonce_seed: int = 0


class FilterTable:
    """Exact-match <src ip, src port> admissions with idle TTL; default drop."""

    def __init__(self, capacity: int = FILTER_TABLE_CAP):
        self.capacity = capacity
        self.entries: Dict[Tuple[Ipv4Address, int], int] = {}

    def lookup(self, src_ip: Ipv4Address, src_port: int, now: int,
               refresh_ttl: Optional[int] = None) -> bool:
        expires = self.entries.get((src_ip, src_port))
        if expires is None or now > expires:
            return False
        if refresh_ttl is not None:
            self.entries[(src_ip, src_port)] = now + refresh_ttl
        return True

    def insert(self, src_ip: Ipv4Address, src_port: int, now: int, ttl: int) -> None:
        key = (src_ip, src_port)
        if key not in self.entries and len(self.entries) >= self.capacity:
            raise TableFull(f"filter table at capacity {self.capacity}")
        self.entries[key] = now + ttl

    def sweep(self, now: int) -> None:
        self.entries = {k: e for k, e in self.entries.items() if now <= e}

    def __len__(self) -> int:
        return len(self.entries)


class ByteFifo:
    """Bounded byte queue preserving frame boundaries; whole-frame drops only."""

    def __init__(self, capacity: int = FIFO_CAPACITY):
        self.capacity = capacity
        self._frames: List[bytes] = []
        self.buffered = 0

    def push(self, frame_bytes: bytes) -> bool:
        """True = Accepted, False = Overflow (prior contents untouched)."""
        if self.buffered + len(frame_bytes) > self.capacity:
            return False
        self._frames.append(frame_bytes)
        self.buffered += len(frame_bytes)
        return True

    def pop(self) -> Optional[bytes]:
        if not self._frames:
            return None
        out = self._frames.pop(0)
        self.buffered -= len(out)
        return out

    def __len__(self) -> int:
        return len(self._frames)


class CloakingNic:
    """Per-host NIC state machine; see module docstring for the contract."""

    def __init__(self, config: NicConfig):
        if config.ip is None:
            raise MissingIp("NIC IP must be set by the host at initialization")
        self.config = config
        self.mac = config.mac
        self.ip = config.ip
        self.filter = FilterTable()
        self.replay_cache = ReplayCache(config.replay_window_seconds)
        self.rx_fifo = ByteFifo()
        self.tx_fifo = ByteFifo()
        # client side: live knock records per <local port, peer ip>
        self._knocked: Dict[Tuple[int, Ipv4Address], int] = {}
        # client side: parked frames awaiting an ARP reply, per target ip
        self._pending_arp: Dict[Ipv4Address, List[EthernetFrame]] = {}
        self._nonce_counter = 0
        self.counters: Dict[str, int] = {
            "rx_frames": 0,
            "tx_frames": 0,
            "fifo_overflows": 0,
        }
        for reason in DropReason:
            self.counters[f"drop_{reason.value}"] = 0

    # -- internals ---------------------------------------------------------

    def _drop(self, actions: Actions, reason: DropReason, stage: int,
              detail: Optional[str] = None) -> Actions:
        actions.drops.append(DropRecord(reason, stage, detail))
        self.counters[f"drop_{reason.value}"] += 1
        if reason is DropReason.FIFO_OVERFLOW:
            self.counters["fifo_overflows"] += 1
        return actions

    def _next_nonce(self) -> bytes:
        nonce = struct.pack(">Q", (self.config.nonce_seed + self._nonce_counter) & (2**64 - 1))
        self._nonce_counter += 1
        return nonce

    def _transmit(self, actions: Actions, frame: EthernetFrame) -> None:
        wire = serialize_frame(frame)
        if not self.tx_fifo.push(wire):
            self._drop(actions, DropReason.FIFO_OVERFLOW, 1, "tx")
            return
        self.tx_fifo.pop()  # the simulated wire drains immediately
        actions.tx_frames.append(frame)
        self.counters["tx_frames"] += 1

    def _knock_frame(self, peer_ip: Ipv4Address, dst_mac: MacAddress,
                     local_port: int, now: int) -> EthernetFrame:
        key = self.config.role_keys.get(peer_ip)
        if key is None:
            raise UnknownPeerKey(f"no shared key configured for {peer_ip}")
        fields = KnockFields(self.ip, local_port, now)
        payload = seal_knock(key, self._next_nonce(), fields).to_bytes()
        return frames.make_icmp_echo(self.mac, dst_mac, self.ip, peer_ip, payload)

    def _emit_with_knock(self, actions: Actions, frame: EthernetFrame,
                         pkt: Ipv4Packet, now: int) -> None:
        """Prefix the frame with a knock if the peer is protected and unknocked."""
        view = pkt.transport_view()
        if view is not None and pkt.dst in self.config.protected_peers:
            state_key = (view.src_port, pkt.dst)
            expires = self._knocked.get(state_key)
            if expires is None or now > expires:
                self._transmit(actions, self._knock_frame(pkt.dst, frame.dst, view.src_port, now))
                self._knocked[state_key] = now + self.config.filter_ttl_seconds
        self._transmit(actions, frame)

    # -- host-facing operations --------------------------------------------

    def on_host_transmit(self, frame: EthernetFrame, now: int) -> Actions:
        if frame.src != self.mac:
            raise NicError("host frame source MAC must match the NIC MAC")
        actions = Actions()
        pkt = frame.payload
        if isinstance(pkt, Ipv4Packet):
            if frame.dst == MAC_ZERO:
                # destination MAC unresolved: park and resolve it ourselves
                self._pending_arp.setdefault(pkt.dst, []).append(frame)
                self._transmit(actions, frames.make_arp(
                    ARP_REQUEST, self.mac, self.ip, MAC_ZERO, pkt.dst))
                return actions
            self._emit_with_knock(actions, frame, pkt, now)
            return actions
        self._transmit(actions, frame)
        return actions

    # -- wire-facing operations --------------------------------------------

    def arp_process(self, arp: ArpPacket) -> Optional[ArpPacket]:
        """Stateless: answer requests for our IP, ignore everything else."""
        if arp.operation == ARP_REQUEST and arp.target_ip == self.ip:
            return ArpPacket(ARP_REPLY, self.mac, self.ip, arp.sender_mac, arp.sender_ip)
        return None

    def on_wire_receive(self, wire: bytes, now: int) -> Actions:
        actions = Actions()
        self.counters["rx_frames"] += 1
        if not self.rx_fifo.push(wire):
            return self._drop(actions, DropReason.FIFO_OVERFLOW, 1, "rx")
        self.rx_fifo.pop()  # processed in the same step; occupancy is per frame
        try:
            frame = parse_frame(wire)
        except frames.FrameError as exc:
            return self._drop(actions, DropReason.MALFORMED, 1, type(exc).__name__)

        if isinstance(frame.payload, ArpPacket):
            return self._receive_arp(actions, frame.payload, now)
        if isinstance(frame.payload, Ipv4Packet):
            return self._receive_ipv4(actions, frame, frame.payload, now)
        return self._drop(actions, DropReason.NO_FILTER_MATCH, 1, "non-ip ethertype")

    def _receive_arp(self, actions: Actions, arp: ArpPacket, now: int) -> Actions:
        reply = self.arp_process(arp)
        if reply is not None:
            self._transmit(actions, frames.make_arp(
                reply.operation, reply.sender_mac, reply.sender_ip,
                reply.target_mac, reply.target_ip))
            return actions
        # Replies never reach the host ARP cache. A reply answering our own
        # outstanding request does complete parked transmissions (the NIC is
        # the resolver on the client side), but it is still not delivered.
        if arp.operation == ARP_REPLY and arp.sender_ip in self._pending_arp:
            parked = self._pending_arp.pop(arp.sender_ip)
            self._drop(actions, DropReason.UNSOLICITED_ARP_REPLY, 1, "consumed by resolver")
            for frame in parked:
                resolved = EthernetFrame(arp.sender_mac, frame.src, frame.ethertype, frame.payload)
                assert isinstance(resolved.payload, Ipv4Packet)
                self._emit_with_knock(actions, resolved, resolved.payload, now)
            return actions
        return self._drop(actions, DropReason.UNSOLICITED_ARP_REPLY, 1)

    def _receive_ipv4(self, actions: Actions, frame: EthernetFrame,
                      pkt: Ipv4Packet, now: int) -> Actions:
        if isinstance(pkt.payload, IcmpMessage) and is_knock_payload(pkt.payload.payload):
            return self._receive_knock(actions, frame, pkt, now)
        view = pkt.transport_view()
        if view is not None:
            if self.filter.lookup(pkt.src, view.src_port, now,
                                  refresh_ttl=self.config.filter_ttl_seconds):
                actions.host_events.append(Delivered(frame, stage_count=2))
                return actions
            return self._drop(actions, DropReason.NO_FILTER_MATCH, 1)
        # plain ICMP and unknown IP protocols fall through to the default drop
        return self._drop(actions, DropReason.NO_FILTER_MATCH, 1)

    def _receive_knock(self, actions: Actions, frame: EthernetFrame,
                       pkt: Ipv4Packet, now: int) -> Actions:
        key = self.config.role_keys.get(pkt.src)
        if key is None:
            # unauthenticatable sender: indistinguishable from a forged tag
            return self._drop(actions, DropReason.BAD_KNOCK, 2, RejectReason.BAD_TAG.value)
        assert isinstance(pkt.payload, IcmpMessage)
        result = open_knock(key, pkt.payload.payload, now, self.replay_cache,
                            self.config.freshness_seconds)
        if isinstance(result, RejectReason):
            return self._drop(actions, DropReason.BAD_KNOCK, 2, result.value)
        try:
            self.filter.insert(result.client_ip, result.client_port, now,
                               self.config.filter_ttl_seconds)
        except TableFull:
            return self._drop(actions, DropReason.BAD_KNOCK, 2, "TableFull")
        actions.host_events.append(ArpCacheUpdate(result.client_ip, frame.src))
        return actions

    # -- maintenance ---------------------------------------------------------

    def tick(self, now: int) -> Actions:
        """Expiry sweep for filter TTLs, replay window, and client knock state."""
        self.filter.sweep(now)
        cache_evict(self.replay_cache, now)
        self._knocked = {k: e for k, e in self._knocked.items() if now <= e}
        return Actions()

    def link_stats(self) -> LinkStats:
        return LinkStats(dict(self.counters))


def nic_init(config: NicConfig) -> CloakingNic:
    return CloakingNic(config)

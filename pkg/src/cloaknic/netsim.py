"""Deterministic discrete-event Ethernet broadcast segment.

The medium is a hub: every frame is offered to every attached node except
its origin, in attach order, one time unit of latency per hop, no loss and
no jitter. Identical scenarios therefore produce byte-identical traces.

Node kinds: cloaked servers and clients (backed by `CloakingNic`), a plain
software-stack baseline host (answers ARP and pings, RSTs closed ports,
and accepts unsolicited ARP replies into its cache -- the poisonable
reference point), and attackers running the layer-2 attack programs.

Stage counts model code-execution-path length. The cloaking NIC rejects at
stage 1 (the filter is the only stage touched); the plain host carries
every probe through link (1), IP (2) and transport/ICMP (3) before its
verdict.
"""

from __future__ import annotations

import heapq
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple, Union

from . import frames
from .frames import (
    ARP_REPLY,
    ARP_REQUEST,
    ICMP_ECHO_REQUEST,
    MAC_BROADCAST,
    MAC_ZERO,
    PROTO_ICMP,
    PROTO_TCP,
    PROTO_UDP,
    TCP_FLAG_ACK,
    TCP_FLAG_RST,
    TCP_FLAG_SYN,
    ArpPacket,
    EthernetFrame,
    FrameError,
    IcmpMessage,
    Ipv4Address,
    Ipv4Packet,
    MacAddress,
    parse_frame,
    serialize_frame,
)
from .knock import is_knock_payload
from .nic import (
    Actions,
    ArpCacheUpdate,
    CloakingNic,
    Delivered,
    DropReason,
    DropRecord,
    LinkStats,
    NicConfig,
)

PLAIN_STAGE_LINK = 1
PLAIN_STAGE_IP = 2
PLAIN_STAGE_TRANSPORT = 3


class SimError(Exception):
    pass


class DuplicateHandle(SimError):
    """Two nodes with the same name (duplicate MAC/IP is deliberately legal)."""


class NothingCaptured(SimError):
    """Knock replay requested before any knock was observed on the wire."""


@dataclass(frozen=True)
class TraceRecord:
    time: int
    node: str
    direction: str  # rx | tx | drop | host_event
    summary: str
    stage_count: int = 0
    raw_hex: Optional[str] = None

    def format_line(self, with_hex: bool = False) -> str:
        line = (f"t={self.time} node={self.node} dir={self.direction} "
                f"stage={self.stage_count} info={self.summary}")
        if with_hex and self.raw_hex:
            line += f" hex={self.raw_hex}"
        return line


@dataclass
class NodeMetrics:
    delivered: int = 0
    tx: int = 0
    arp_cache_writes: int = 0
    dropped_by_reason: Counter = field(default_factory=Counter)
    cep_histogram: Counter = field(default_factory=Counter)
    ignored: int = 0


class Metrics:
    def __init__(self):
        self.nodes: Dict[str, NodeMetrics] = {}

    def node(self, name: str) -> NodeMetrics:
        return self.nodes.setdefault(name, NodeMetrics())

    def to_text(self) -> str:
        out = []
        for name in sorted(self.nodes):
            m = self.nodes[name]
            out.append(f"node {name}")
            out.append(f"  delivered {m.delivered}")
            out.append(f"  tx {m.tx}")
            out.append(f"  arp_cache_writes {m.arp_cache_writes}")
            out.append(f"  ignored {m.ignored}")
            for reason in sorted(m.dropped_by_reason):
                out.append(f"  drop {reason} {m.dropped_by_reason[reason]}")
            for stage in sorted(m.cep_histogram):
                out.append(f"  cep {stage} {m.cep_histogram[stage]}")
        return "\n".join(out) + "\n"


def describe_frame(wire: bytes) -> str:
    """One-line human summary of a frame for trace records."""
    try:
        frame = parse_frame(wire)
    except FrameError as exc:
        return f"malformed ({type(exc).__name__}, {len(wire)} bytes)"
    p = frame.payload
    if isinstance(p, ArpPacket):
        if p.operation == ARP_REQUEST:
            return f"arp-request who-has {p.target_ip} tell {p.sender_ip}"
        return f"arp-reply {p.sender_ip} is-at {p.sender_mac}"
    if isinstance(p, Ipv4Packet):
        if isinstance(p.payload, IcmpMessage):
            if is_knock_payload(p.payload.payload):
                return f"icmp-knock {p.src}->{p.dst}"
            return f"icmp type={p.payload.icmp_type} {p.src}->{p.dst}"
        view = p.transport_view()
        if view is not None:
            flag = " syn" if view.is_syn else ""
            return f"{view.kind} {p.src}:{view.src_port}->{p.dst}:{view.dst_port}{flag}"
        return f"ipv4 proto={p.protocol} {p.src}->{p.dst}"
    return f"ethertype=0x{frame.ethertype:04x} ({len(wire)} bytes)"


# --------------------------------------------------------------------------
# attack programs

@dataclass
class ArpPoison:
    victim: str            # node whose cache the forged mapping targets
    claimed_ip: Ipv4Address
    claimed_mac: MacAddress
    period: int = 1
    count: int = 1


@dataclass
class MacSpoof:
    victim: str            # node whose source MAC is forged
    count: int = 1
    period: int = 1


@dataclass
class KnockReplay:
    pass


@dataclass
class PortScan:
    target: str
    port_lo: int = 1
    port_hi: int = 1024
    with_ping: bool = False


AttackProgram = Union[ArpPoison, MacSpoof, KnockReplay, PortScan]


# --------------------------------------------------------------------------
# nodes

class Node:
    """Base: owns a name/mac/ip; subclasses produce `Actions` per frame."""

    promiscuous = False

    def __init__(self, name: str, mac: MacAddress, ip: Ipv4Address):
        self.name = name
        self.mac = mac
        self.ip = ip

    def receive(self, wire: bytes, now: int) -> Actions:
        raise NotImplementedError

    def observe(self, wire: bytes, now: int) -> None:
        """Promiscuous tap; called for every frame regardless of address."""

    def perform(self, step, now: int) -> Actions:
        """Execute a scheduled scenario step."""
        raise NotImplementedError


class CloakedServerNode(Node):
    def __init__(self, name, mac, ip, nic: CloakingNic, services=frozenset()):
        super().__init__(name, mac, ip)
        self.nic = nic
        self.services = set(services)

    def receive(self, wire: bytes, now: int) -> Actions:
        return self.nic.on_wire_receive(wire, now)


class ClientNode(Node):
    """A host with a cloaking NIC; scripted sends go through the NIC."""

    def __init__(self, name, mac, ip, nic: CloakingNic):
        super().__init__(name, mac, ip)
        self.nic = nic
        self._ident = 0

    def receive(self, wire: bytes, now: int) -> Actions:
        return self.nic.on_wire_receive(wire, now)

    def perform(self, step, now: int) -> Actions:
        kind = step[0]
        if kind == "send":
            _, dst_ip, proto, src_port, dst_port = step
            if proto == "tcp":
                payload = frames.tcp_segment(src_port, dst_port, TCP_FLAG_SYN)
                proto_num = PROTO_TCP
            else:
                payload = frames.udp_datagram(src_port, dst_port)
                proto_num = PROTO_UDP
            self._ident += 1
            # dst MAC left zero: the NIC resolves it via ARP and parks the frame
            pkt = Ipv4Packet(self.ip, dst_ip, proto_num, payload,
                             identification=self._ident)
            frame = parse_frame(serialize_frame(
                EthernetFrame(MAC_ZERO, self.mac, frames.ETHERTYPE_IPV4, pkt)))
            return self.nic.on_host_transmit(frame, now)
        if kind == "ping":
            _, dst_ip, dst_mac = step
            frame = frames.make_icmp_echo(self.mac, dst_mac or MAC_BROADCAST,
                                          self.ip, dst_ip, b"ping")
            return self.nic.on_host_transmit(frame, now)
        raise SimError(f"unknown client step {kind!r}")


class PlainHostNode(Node):
    """Baseline software stack: the host the paper's NIC replaces.

    Answers ARP for its IP, replies to echo, RSTs closed ports, SYN-ACKs
    open ones, and accepts any ARP reply into its cache.
    """

    def __init__(self, name, mac, ip, services=frozenset()):
        super().__init__(name, mac, ip)
        self.services = set(services)
        self.arp_cache: Dict[Ipv4Address, MacAddress] = {}

    def receive(self, wire: bytes, now: int) -> Actions:
        actions = Actions()
        try:
            frame = parse_frame(wire)
        except FrameError as exc:
            actions.drops.append(DropRecord(DropReason.MALFORMED, PLAIN_STAGE_LINK,
                                            type(exc).__name__))
            return actions
        p = frame.payload
        if isinstance(p, ArpPacket):
            if p.operation == ARP_REQUEST and p.target_ip == self.ip:
                actions.tx_frames.append(frames.make_arp(
                    ARP_REPLY, self.mac, self.ip, p.sender_mac, p.sender_ip))
            elif p.operation == ARP_REPLY:
                # no request/reply matching: the classic poisonable cache
                self.arp_cache[p.sender_ip] = p.sender_mac
                actions.host_events.append(ArpCacheUpdate(p.sender_ip, p.sender_mac))
            else:
                actions.drops.append(DropRecord(DropReason.NO_FILTER_MATCH,
                                                PLAIN_STAGE_LINK, "arp-other-ip"))
            return actions
        if isinstance(p, Ipv4Packet):
            return self._receive_ipv4(actions, frame, p)
        actions.drops.append(DropRecord(DropReason.NO_FILTER_MATCH,
                                        PLAIN_STAGE_LINK, "unknown-ethertype"))
        return actions

    def _receive_ipv4(self, actions: Actions, frame: EthernetFrame,
                      p: Ipv4Packet) -> Actions:
        if isinstance(p.payload, IcmpMessage):
            if p.payload.icmp_type == ICMP_ECHO_REQUEST:
                actions.tx_frames.append(frames.make_icmp_echo(
                    self.mac, frame.src, self.ip, p.src, p.payload.payload,
                    p.payload.identifier, p.payload.sequence, reply=True))
                actions.host_events.append(Delivered(frame, PLAIN_STAGE_TRANSPORT))
            else:
                actions.drops.append(DropRecord(DropReason.NO_FILTER_MATCH,
                                                PLAIN_STAGE_TRANSPORT, "icmp-other"))
            return actions
        view = p.transport_view()
        if view is None:
            actions.drops.append(DropRecord(DropReason.NO_FILTER_MATCH,
                                            PLAIN_STAGE_IP, "unknown-proto"))
            return actions
        if view.kind == "tcp" and view.is_syn:
            flags = TCP_FLAG_SYN | TCP_FLAG_ACK if view.dst_port in self.services \
                else TCP_FLAG_RST | TCP_FLAG_ACK
            seg = frames.tcp_segment(view.dst_port, view.src_port, flags)
            actions.tx_frames.append(frames.make_ipv4_frame(
                self.mac, frame.src, self.ip, p.src, PROTO_TCP, seg))
            actions.host_events.append(Delivered(frame, PLAIN_STAGE_TRANSPORT))
            return actions
        actions.drops.append(DropRecord(DropReason.NO_FILTER_MATCH,
                                        PLAIN_STAGE_TRANSPORT, f"{view.kind}-closed"))
        return actions


class AttackerNode(Node):
    """Passive eavesdropper turned active: captures knocks, forges frames."""

    promiscuous = True

    def __init__(self, name, mac, ip):
        super().__init__(name, mac, ip)
        self.captured_knocks: List[bytes] = []

    def observe(self, wire: bytes, now: int) -> None:
        try:
            frame = parse_frame(wire)
        except FrameError:
            return
        p = frame.payload
        if (isinstance(p, Ipv4Packet) and isinstance(p.payload, IcmpMessage)
                and is_knock_payload(p.payload.payload)):
            self.captured_knocks.append(wire)

    def receive(self, wire: bytes, now: int) -> Actions:
        return Actions()  # attackers never answer traffic aimed at them

    def frames_for(self, program: AttackProgram, shot: int,
                   lookup) -> List[bytes]:
        """Wire frames for one firing of a program; `lookup(name) -> Node`."""
        if isinstance(program, ArpPoison):
            victim = lookup(program.victim)
            forged = frames.make_arp(ARP_REPLY, program.claimed_mac,
                                     program.claimed_ip, victim.mac, victim.ip)
            return [serialize_frame(forged)]
        if isinstance(program, MacSpoof):
            victim = lookup(program.victim)
            # any frame with the victim's source MAC hijacks switch learning
            spoofed = EthernetFrame(MAC_BROADCAST, victim.mac, 0x88B5, b"spoof")
            return [serialize_frame(spoofed)]
        if isinstance(program, KnockReplay):
            if not self.captured_knocks:
                raise NothingCaptured(f"{self.name} has observed no knock to replay")
            return [self.captured_knocks[-1]]
        if isinstance(program, PortScan):
            target = lookup(program.target)
            out = []
            for i, port in enumerate(range(program.port_lo, program.port_hi + 1)):
                seg = frames.tcp_segment(50000 + (i % 10000), port, TCP_FLAG_SYN)
                out.append(serialize_frame(frames.make_ipv4_frame(
                    self.mac, target.mac, self.ip, target.ip, PROTO_TCP, seg,
                    identification=i & 0xFFFF)))
            if program.with_ping:
                out.append(serialize_frame(frames.make_icmp_echo(
                    self.mac, target.mac, self.ip, target.ip, b"probe")))
            return out
        raise SimError(f"unknown attack program {program!r}")


# --------------------------------------------------------------------------
# the segment

class Segment:
    def __init__(self):
        self.nodes: List[Node] = []
        self._by_name: Dict[str, Node] = {}
        self.clock = 0
        self._queue: List[tuple] = []  # (time, seq, kind, *payload)
        self._seq = 0
        self.metrics = Metrics()
        self.trace: List[TraceRecord] = []

    def attach(self, node: Node) -> Node:
        if node.name in self._by_name:
            raise DuplicateHandle(f"node {node.name!r} already attached")
        self.nodes.append(node)
        self._by_name[node.name] = node
        self.metrics.node(node.name)
        return node

    def node(self, name: str) -> Node:
        return self._by_name[name]

    def _push(self, time: int, kind: str, *payload) -> None:
        heapq.heappush(self._queue, (time, self._seq, kind, payload))
        self._seq += 1

    def inject(self, time: int, wire: bytes, origin: str) -> None:
        self._push(time, "frame", wire, origin)

    def schedule(self, time: int, node: str, step: tuple) -> None:
        self._push(time, "action", node, step)

    def inject_attack(self, attacker: AttackerNode, start: int,
                      program: AttackProgram) -> None:
        """Schedule a program; repetition expands to one action per firing."""
        reps = getattr(program, "count", 1)
        period = getattr(program, "period", 1)
        for shot in range(reps):
            self.schedule(start + shot * period, attacker.name,
                          ("attack", program, shot))

    # -- bookkeeping ---------------------------------------------------------

    def _record(self, rec: TraceRecord) -> None:
        self.trace.append(rec)

    def _emit(self, origin: Node, out_frames: Iterable[EthernetFrame], now: int) -> None:
        m = self.metrics.node(origin.name)
        for frame in out_frames:
            wire = serialize_frame(frame)
            m.tx += 1
            self._record(TraceRecord(now, origin.name, "tx",
                                     describe_frame(wire), 0, wire.hex()))
            self.inject(now + 1, wire, origin.name)

    def _emit_raw(self, origin: Node, wires: Iterable[bytes], now: int) -> None:
        m = self.metrics.node(origin.name)
        for wire in wires:
            m.tx += 1
            self._record(TraceRecord(now, origin.name, "tx",
                                     describe_frame(wire), 0, wire.hex()))
            self.inject(now + 1, wire, origin.name)

    def _apply_actions(self, node: Node, actions: Actions, now: int,
                       wire: Optional[bytes] = None) -> None:
        m = self.metrics.node(node.name)
        terminal = False
        for drop in actions.drops:
            detail = f" {drop.detail}" if drop.detail else ""
            summary = f"{drop.reason.value}{detail}"
            if wire is not None:
                summary += f" | {describe_frame(wire)}"
            m.dropped_by_reason[drop.reason.value] += 1
            m.cep_histogram[drop.stage_count] += 1
            self._record(TraceRecord(now, node.name, "drop", summary,
                                     drop.stage_count,
                                     wire.hex() if wire else None))
            terminal = True
        for event in actions.host_events:
            if isinstance(event, Delivered):
                m.delivered += 1
                m.cep_histogram[event.stage_count] += 1
                fw = serialize_frame(event.frame)
                self._record(TraceRecord(now, node.name, "host_event",
                                         f"delivered | {describe_frame(fw)}",
                                         event.stage_count, fw.hex()))
                terminal = True
            elif isinstance(event, ArpCacheUpdate):
                m.arp_cache_writes += 1
                m.cep_histogram[2] += 1
                self._record(TraceRecord(now, node.name, "host_event",
                                         f"arp-cache-update {event.ip} is-at {event.mac}",
                                         2))
                terminal = True
        if wire is not None and not terminal:
            # frame consumed by answering it (e.g. an ARP reply went out)
            m.cep_histogram[1] += 1
            self._record(TraceRecord(now, node.name, "rx",
                                     f"processed | {describe_frame(wire)}", 1,
                                     wire.hex()))
        self._emit(node, actions.tx_frames, now)

    # -- the event loop ------------------------------------------------------

    def step(self) -> List[TraceRecord]:
        if not self._queue:
            return []
        mark = len(self.trace)
        time, _seq, kind, payload = heapq.heappop(self._queue)
        self.clock = time
        if kind == "frame":
            wire, origin = payload
            dst = MacAddress(wire[:6]) if len(wire) >= 6 else None
            for node in self.nodes:
                if node.name == origin:
                    continue
                if node.promiscuous:
                    node.observe(wire, time)
                if dst is not None and dst not in (node.mac, MAC_BROADCAST):
                    self.metrics.node(node.name).ignored += 1
                    self._record(TraceRecord(time, node.name, "rx",
                                             f"ignored (other dst) | {describe_frame(wire)}", 0))
                    continue
                self._apply_actions(node, node.receive(wire, time), time, wire)
        else:
            name, step = payload
            node = self._by_name[name]
            if step[0] == "attack":
                assert isinstance(node, AttackerNode)
                _, program, shot = step
                self._emit_raw(node, node.frames_for(program, shot, self.node), time)
            else:
                self._apply_actions(node, node.perform(step, time), time)
        return self.trace[mark:]

    def run(self, horizon: Optional[int] = None) -> None:
        while self._queue:
            if horizon is not None and self._queue[0][0] > horizon:
                break
            self.step()

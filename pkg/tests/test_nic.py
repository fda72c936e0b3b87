import pytest

from cloaknic import frames
from cloaknic.frames import (
    ARP_REPLY,
    ARP_REQUEST,
    MAC_ZERO,
    PROTO_TCP,
    ArpPacket,
    EthernetFrame,
    IcmpMessage,
    Ipv4Address,
    Ipv4Packet,
    MacAddress,
    make_arp,
    make_icmp_echo,
    make_ipv4_frame,
    parse_frame,
    serialize_frame,
    tcp_segment,
    udp_datagram,
)
from cloaknic.knock import KnockFields, RejectReason, SharedKey, seal_knock
from cloaknic.nic import (
    Actions,
    ArpCacheUpdate,
    ByteFifo,
    CloakingNic,
    Delivered,
    DropReason,
    FilterTable,
    MissingIp,
    NicConfig,
    NicError,
    TableFull,
    UnknownPeerKey,
    nic_init,
)

SERVER_MAC = MacAddress.from_str("aa:00:00:00:00:02")
SERVER_IP = Ipv4Address.from_str("10.0.0.2")
CLIENT_MAC = MacAddress.from_str("aa:00:00:00:00:05")
CLIENT_IP = Ipv4Address.from_str("10.0.0.5")
ATTACKER_MAC = MacAddress.from_str("de:ad:be:ef:00:66")
ATTACKER_IP = Ipv4Address.from_str("10.0.0.66")
KEY = SharedKey(bytes(range(32)))


def server_nic(**overrides) -> CloakingNic:
    cfg = NicConfig(mac=SERVER_MAC, ip=SERVER_IP,
                    role_keys={CLIENT_IP: KEY}, **overrides)
    return CloakingNic(cfg)


def client_nic(**overrides) -> CloakingNic:
    cfg = NicConfig(mac=CLIENT_MAC, ip=CLIENT_IP,
                    role_keys={SERVER_IP: KEY},
                    protected_peers={SERVER_IP}, **overrides)
    return CloakingNic(cfg)


def knock_wire(now: int, nonce: bytes = bytes(8), src_ip=CLIENT_IP,
               src_mac=CLIENT_MAC, port: int = 40000, key: SharedKey = KEY) -> bytes:
    payload = seal_knock(key, nonce, KnockFields(src_ip, port, now)).to_bytes()
    return serialize_frame(make_icmp_echo(src_mac, SERVER_MAC, src_ip, SERVER_IP, payload))


def syn_wire(src_ip=CLIENT_IP, src_mac=CLIENT_MAC, src_port=40000, dst_port=22) -> bytes:
    return serialize_frame(make_ipv4_frame(
        src_mac, SERVER_MAC, src_ip, SERVER_IP, PROTO_TCP,
        tcp_segment(src_port, dst_port)))


class TestInit:
    def test_missing_ip(self):
        with pytest.raises(MissingIp):
            nic_init(NicConfig(mac=SERVER_MAC))

    def test_default_drop_on_fresh_nic(self):
        nic = server_nic()
        for port in (1, 22, 80, 65535):
            assert not nic.filter.lookup(CLIENT_IP, port, now=0)

    def test_independent_state(self):
        cfg = NicConfig(mac=SERVER_MAC, ip=SERVER_IP)
        a, b = CloakingNic(cfg), CloakingNic(cfg)
        a.filter.insert(CLIENT_IP, 1, 0, 60)
        assert len(b.filter) == 0


class TestFilterTable:
    def test_insert_then_lookup(self):
        t = FilterTable()
        t.insert(CLIENT_IP, 40000, now=0, ttl=60)
        assert t.lookup(CLIENT_IP, 40000, now=0)

    def test_exact_match_key(self):
        t = FilterTable()
        t.insert(CLIENT_IP, 40000, now=0, ttl=60)
        assert not t.lookup(CLIENT_IP, 40001, now=0)
        assert not t.lookup(ATTACKER_IP, 40000, now=0)

    def test_ttl_boundary(self):
        t = FilterTable()
        t.insert(CLIENT_IP, 40000, now=0, ttl=60)
        assert t.lookup(CLIENT_IP, 40000, now=60)
        assert not t.lookup(CLIENT_IP, 40000, now=61)

    def test_reinsert_refreshes_without_duplicating(self):
        t = FilterTable()
        t.insert(CLIENT_IP, 40000, now=0, ttl=60)
        t.insert(CLIENT_IP, 40000, now=30, ttl=60)
        assert len(t) == 1
        assert t.lookup(CLIENT_IP, 40000, now=90)

    def test_lookup_refreshes_expiry(self):
        t = FilterTable()
        t.insert(CLIENT_IP, 40000, now=0, ttl=60)
        assert t.lookup(CLIENT_IP, 40000, now=50, refresh_ttl=60)
        assert t.lookup(CLIENT_IP, 40000, now=105)

    def test_capacity_1024(self):
        t = FilterTable()
        for i in range(1024):
            t.insert(Ipv4Address(bytes([10, 1, i >> 8, i & 0xFF])), 1, now=0, ttl=60)
        with pytest.raises(TableFull):
            t.insert(Ipv4Address(bytes([10, 2, 0, 0])), 1, now=0, ttl=60)
        # refreshing an existing key is still allowed at capacity
        t.insert(Ipv4Address(bytes([10, 1, 0, 0])), 1, now=10, ttl=60)


class TestByteFifo:
    def test_two_max_frames_fill_it(self):
        fifo = ByteFifo()
        assert fifo.push(b"\x00" * 1518)
        assert fifo.push(b"\x00" * 1518)
        assert fifo.buffered == 3036

    def test_third_frame_overflows_pop_resumes(self):
        fifo = ByteFifo()
        fifo.push(b"\x00" * 1518)
        fifo.push(b"\x00" * 1518)
        assert not fifo.push(b"\x00" * 64)
        assert fifo.buffered == 3036  # prior contents intact
        assert fifo.pop() == b"\x00" * 1518
        assert fifo.push(b"\x00" * 64)

    def test_single_oversize_frame(self):
        fifo = ByteFifo()
        assert not fifo.push(b"\x00" * 3037)
        assert fifo.buffered == 0

    def test_pop_empty(self):
        assert ByteFifo().pop() is None


class TestArpProcessing:
    def test_request_for_nic_ip_gets_reply(self):
        nic = server_nic()
        wire = serialize_frame(make_arp(ARP_REQUEST, CLIENT_MAC, CLIENT_IP, MAC_ZERO, SERVER_IP))
        actions = nic.on_wire_receive(wire, now=0)
        assert len(actions.tx_frames) == 1
        reply = actions.tx_frames[0].payload
        assert isinstance(reply, ArpPacket)
        assert reply.operation == ARP_REPLY
        assert reply.sender_mac == SERVER_MAC
        assert reply.sender_ip == SERVER_IP
        assert actions.tx_frames[0].dst == CLIENT_MAC  # unicast
        assert actions.host_events == [] and actions.drops == []

    def test_request_for_other_ip_silently_dropped(self):
        nic = server_nic()
        wire = serialize_frame(make_arp(ARP_REQUEST, CLIENT_MAC, CLIENT_IP, MAC_ZERO, ATTACKER_IP))
        actions = nic.on_wire_receive(wire, now=0)
        assert actions.tx_frames == [] and actions.host_events == []
        assert len(actions.drops) == 1

    def test_gratuitous_reply_never_reaches_host(self):
        nic = server_nic()
        forged = make_arp(ARP_REPLY, ATTACKER_MAC, Ipv4Address.from_str("10.0.0.1"),
                          SERVER_MAC, SERVER_IP)
        actions = nic.on_wire_receive(serialize_frame(forged), now=0)
        assert actions.host_events == []
        assert actions.drops[0].reason is DropReason.UNSOLICITED_ARP_REPLY

    def test_arp_process_is_stateless(self):
        nic = server_nic()
        req = ArpPacket(ARP_REQUEST, CLIENT_MAC, CLIENT_IP, MAC_ZERO, SERVER_IP)
        assert nic.arp_process(req) == nic.arp_process(req)
        assert nic.arp_process(ArpPacket(ARP_REPLY, CLIENT_MAC, CLIENT_IP,
                                         SERVER_MAC, SERVER_IP)) is None


class TestKnockAdmission:
    def test_valid_knock_then_syn(self):
        nic = server_nic()
        first = nic.on_wire_receive(knock_wire(now=100), now=100)
        assert first.host_events == [ArpCacheUpdate(CLIENT_IP, CLIENT_MAC)]
        assert first.tx_frames == [] and first.drops == []
        second = nic.on_wire_receive(syn_wire(), now=101)
        assert len(second.host_events) == 1
        assert isinstance(second.host_events[0], Delivered)

    def test_arp_cache_update_uses_outer_source_mac(self):
        nic = server_nic()
        actions = nic.on_wire_receive(knock_wire(now=0, src_mac=ATTACKER_MAC), now=0)
        assert actions.host_events == [ArpCacheUpdate(CLIENT_IP, ATTACKER_MAC)]

    def test_syn_without_knock_is_silent(self):
        nic = server_nic()
        actions = nic.on_wire_receive(syn_wire(), now=0)
        assert actions.tx_frames == [] and actions.host_events == []
        assert actions.drops == [actions.drops[0]]
        assert actions.drops[0].reason is DropReason.NO_FILTER_MATCH
        assert actions.drops[0].stage_count == 1

    def test_bad_knock_emits_nothing(self):
        nic = server_nic()
        wire = knock_wire(now=0, key=SharedKey(bytes(32)))  # wrong key
        actions = nic.on_wire_receive(wire, now=0)
        assert actions.tx_frames == [] and actions.host_events == []
        assert actions.drops[0].reason is DropReason.BAD_KNOCK
        assert actions.drops[0].detail == RejectReason.BAD_TAG.value
        assert len(nic.filter) == 0

    def test_knock_from_unknown_peer(self):
        nic = server_nic()
        wire = knock_wire(now=0, src_ip=ATTACKER_IP, src_mac=ATTACKER_MAC)
        actions = nic.on_wire_receive(wire, now=0)
        assert actions.drops[0].reason is DropReason.BAD_KNOCK
        assert len(nic.filter) == 0

    def test_replayed_knock(self):
        nic = server_nic()
        wire = knock_wire(now=0)
        nic.on_wire_receive(wire, now=0)
        expiry = dict(nic.filter.entries)
        actions = nic.on_wire_receive(wire, now=5)
        assert actions.drops[0].detail == RejectReason.REPLAYED.value
        assert nic.filter.entries == expiry  # neither extended nor refreshed

    def test_plain_echo_is_dropped_by_default(self):
        nic = server_nic()
        wire = serialize_frame(make_icmp_echo(CLIENT_MAC, SERVER_MAC, CLIENT_IP,
                                              SERVER_IP, b"ping"))
        actions = nic.on_wire_receive(wire, now=0)
        assert actions.tx_frames == []
        assert actions.drops[0].reason is DropReason.NO_FILTER_MATCH

    def test_malformed_frame(self):
        nic = server_nic()
        actions = nic.on_wire_receive(b"\x00" * 13, now=0)
        assert actions.drops[0].reason is DropReason.MALFORMED


class TestCloakingSweep:
    def test_port_sweep_and_echo_elicit_zero_bytes(self):
        nic = server_nic()
        for port in range(1, 1025):
            actions = nic.on_wire_receive(
                syn_wire(src_ip=ATTACKER_IP, src_mac=ATTACKER_MAC,
                         src_port=50000, dst_port=port), now=port)
            assert actions.tx_frames == [] and actions.host_events == []
            assert actions.drops[0].stage_count == 1
        echo = serialize_frame(make_icmp_echo(ATTACKER_MAC, SERVER_MAC,
                                              ATTACKER_IP, SERVER_IP, b"x"))
        actions = nic.on_wire_receive(echo, now=2000)
        assert actions.tx_frames == []
        assert nic.counters["tx_frames"] == 0

    def test_udp_probe_is_silent(self):
        nic = server_nic()
        wire = serialize_frame(make_ipv4_frame(ATTACKER_MAC, SERVER_MAC, ATTACKER_IP,
                                               SERVER_IP, frames.PROTO_UDP,
                                               udp_datagram(1234, 53)))
        actions = nic.on_wire_receive(wire, now=0)
        assert actions.tx_frames == []


class TestHostTransmit:
    def syn_frame(self, nic, dst_mac=SERVER_MAC, dst_ip=SERVER_IP, src_port=40000):
        return make_ipv4_frame(nic.mac, dst_mac, nic.ip, dst_ip, PROTO_TCP,
                               tcp_segment(src_port, 22))

    def test_knock_precedes_first_transport_frame(self):
        nic = client_nic()
        actions = nic.on_host_transmit(self.syn_frame(nic), now=5)
        assert len(actions.tx_frames) == 2
        knock, syn = actions.tx_frames
        pkt = knock.payload
        assert isinstance(pkt, Ipv4Packet) and isinstance(pkt.payload, IcmpMessage)
        assert pkt.payload.payload[:4] == b"KNCK"
        assert len(pkt.payload.payload) == 46
        assert syn.payload.transport_view().is_syn

    def test_second_segment_has_no_knock(self):
        nic = client_nic()
        nic.on_host_transmit(self.syn_frame(nic), now=5)
        actions = nic.on_host_transmit(self.syn_frame(nic), now=6)
        assert len(actions.tx_frames) == 1

    def test_reknock_after_ttl_expiry(self):
        nic = client_nic()
        nic.on_host_transmit(self.syn_frame(nic), now=0)
        actions = nic.on_host_transmit(self.syn_frame(nic), now=61)
        assert len(actions.tx_frames) == 2

    def test_unprotected_peer_passthrough(self):
        nic = client_nic()
        other_ip = Ipv4Address.from_str("10.0.0.7")
        frame = make_ipv4_frame(nic.mac, ATTACKER_MAC, nic.ip, other_ip,
                                PROTO_TCP, tcp_segment(1, 2))
        actions = nic.on_host_transmit(frame, now=0)
        assert actions.tx_frames == [frame]

    def test_unknown_peer_key(self):
        cfg = NicConfig(mac=CLIENT_MAC, ip=CLIENT_IP, protected_peers={SERVER_IP})
        nic = CloakingNic(cfg)
        with pytest.raises(UnknownPeerKey):
            nic.on_host_transmit(self.syn_frame(nic), now=0)

    def test_wrong_source_mac_rejected(self):
        nic = client_nic()
        frame = make_ipv4_frame(ATTACKER_MAC, SERVER_MAC, nic.ip, SERVER_IP,
                                PROTO_TCP, tcp_segment(1, 2))
        with pytest.raises(NicError):
            nic.on_host_transmit(frame, now=0)

    def test_unresolved_mac_triggers_arp_then_knock(self):
        nic = client_nic()
        actions = nic.on_host_transmit(self.syn_frame(nic, dst_mac=MAC_ZERO), now=5)
        assert len(actions.tx_frames) == 1
        assert isinstance(actions.tx_frames[0].payload, ArpPacket)
        reply = serialize_frame(make_arp(ARP_REPLY, SERVER_MAC, SERVER_IP,
                                         CLIENT_MAC, CLIENT_IP))
        actions = nic.on_wire_receive(reply, now=7)
        assert actions.host_events == []  # wire ARP never reaches the host
        kinds = [type(f.payload).__name__ for f in actions.tx_frames]
        assert len(actions.tx_frames) == 2  # knock then SYN, now resolved
        assert all(f.dst == SERVER_MAC for f in actions.tx_frames)


class TestTick:
    def test_expired_entries_swept(self):
        nic = server_nic()
        nic.filter.insert(CLIENT_IP, 40000, now=40, ttl=60)
        nic.tick(now=101)
        assert len(nic.filter) == 0

    def test_idempotent(self):
        nic = server_nic()
        nic.on_wire_receive(knock_wire(now=0), now=0)
        nic.tick(now=30)
        state = (dict(nic.filter.entries), dict(nic.replay_cache.seen))
        nic.tick(now=30)
        assert (dict(nic.filter.entries), dict(nic.replay_cache.seen)) == state

    def test_empty_noop(self):
        nic = server_nic()
        actions = nic.tick(now=0)
        assert actions == Actions()


class TestConservation:
    def test_every_frame_has_exactly_one_fate(self):
        import random

        rng = random.Random(42)
        nic = server_nic()
        wires = []
        for i in range(300):
            kind = rng.randrange(5)
            if kind == 0:
                wires.append(serialize_frame(make_arp(
                    ARP_REQUEST, CLIENT_MAC, CLIENT_IP, MAC_ZERO,
                    rng.choice([SERVER_IP, ATTACKER_IP]))))
            elif kind == 1:
                wires.append(knock_wire(now=i, nonce=rng.randbytes(8)))
            elif kind == 2:
                wires.append(syn_wire(src_port=rng.randrange(1, 65536)))
            elif kind == 3:
                wires.append(rng.randbytes(rng.randrange(0, 80)))
            else:
                wires.append(serialize_frame(EthernetFrame(
                    SERVER_MAC, ATTACKER_MAC, 0x88B5, rng.randbytes(20))))
        for i, wire in enumerate(wires):
            actions = nic.on_wire_receive(wire, now=i)
            fates = (len(actions.tx_frames) + len(actions.drops)
                     + sum(1 for e in actions.host_events
                           if isinstance(e, (Delivered, ArpCacheUpdate))))
            assert fates == 1, f"frame {i} had {fates} fates"

    def test_delivered_implies_prior_knock(self):
        nic = server_nic()
        delivered_before_knock = nic.on_wire_receive(syn_wire(), now=0)
        assert not any(isinstance(e, Delivered) for e in delivered_before_knock.host_events)
        nic.on_wire_receive(knock_wire(now=1), now=1)
        after = nic.on_wire_receive(syn_wire(), now=2)
        assert any(isinstance(e, Delivered) for e in after.host_events)

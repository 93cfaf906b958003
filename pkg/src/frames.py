# src/frames.py
"""
Wire framing for data and reconfiguration packets.

Frames are built with scapy (Ether / Dot1Q / IP / UDP) and inspected on the
data path by fixed offsets, the way the packet filter does in hardware:

  offset  field
  0       Ethernet dst, src
  12      TPID 0x8100
  14      TCI (PCP/DEI + 12-bit VID)
  16      ethertype 0x0800
  18      IPv4 header (20 bytes, no options)
  27        protocol
  30        src address
  34        dst address
  38      UDP header: sport, dport(40), length(42), checksum(44)
  46      UDP payload: module headers / reconfiguration payload

Reconfiguration payload: cookie(4) resource_id(2) index(1) entry(n).
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

from scapy.layers.inet import IP, UDP
from scapy.layers.l2 import Dot1Q, Ether
from scapy.packet import Raw

from src.errors import LengthMismatch, UnknownResource, WidthMismatch
from src.formats import (
    CONTROL_VID,
    ReconfigPacket,
    ResourceId,
    payload_len,
)
from src.phv import RawPacket

TPID_8021Q = 0x8100
ETHERTYPE_IPV4 = 0x0800
IPPROTO_UDP = 17

VLAN_TCI_OFFSET = 14
ETHERTYPE_OFFSET = 16
IP_OFFSET = 18
IP_PROTO_OFFSET = 27
IP_SRC_OFFSET = 30
IP_DST_OFFSET = 34
UDP_OFFSET = 38
UDP_SPORT_OFFSET = 38
UDP_DPORT_OFFSET = 40
UDP_LEN_OFFSET = 42
PAYLOAD_OFFSET = 46
RECONFIG_HEADER = 7  # cookie + resource id + index

# fixed dummy L2/L3 headers of every reconfiguration packet
RECONFIG_PORT = 0xF1F1
RECONFIG_SRC_MAC = "02:00:00:00:00:01"
RECONFIG_DST_MAC = "ff:ff:ff:ff:ff:ff"
RECONFIG_SRC_IP = "10.255.255.1"
RECONFIG_DST_IP = "10.255.255.2"

DATA_SRC_MAC = "02:00:00:00:00:10"
DATA_DST_MAC = "02:00:00:00:00:20"


def ip_to_int(addr: str) -> int:
    return int(ipaddress.IPv4Address(addr))


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


# -----------------------
# FIXED-OFFSET INSPECTION
# -----------------------
def frame_vid(data: bytes) -> Optional[int]:
    """VID of an 802.1Q-tagged frame, None when untagged."""
    if len(data) < ETHERTYPE_OFFSET + 2:
        return None
    tpid, tci = struct.unpack_from("!HH", data, 12)
    if tpid != TPID_8021Q:
        return None
    return tci & 0x0FFF


def has_reconfig_framing(data: bytes) -> bool:
    """VLAN 0xFFF / IPv4 / UDP to the reconfiguration port."""
    if len(data) < PAYLOAD_OFFSET or frame_vid(data) != CONTROL_VID:
        return False
    ethertype = struct.unpack_from("!H", data, ETHERTYPE_OFFSET)[0]
    if ethertype != ETHERTYPE_IPV4 or data[IP_PROTO_OFFSET] != IPPROTO_UDP:
        return False
    return struct.unpack_from("!H", data, UDP_DPORT_OFFSET)[0] == RECONFIG_PORT


def reconfig_cookie(data: bytes) -> Optional[int]:
    if len(data) < PAYLOAD_OFFSET + 4:
        return None
    return struct.unpack_from("!I", data, PAYLOAD_OFFSET)[0]


# -----------------------
# RECONFIGURATION PACKETS
# -----------------------
def build_reconfig_frame(payload: bytes) -> bytes:
    frame = (
        Ether(dst=RECONFIG_DST_MAC, src=RECONFIG_SRC_MAC)
        / Dot1Q(vlan=CONTROL_VID, prio=0)
        / IP(src=RECONFIG_SRC_IP, dst=RECONFIG_DST_IP, id=0, ttl=64, flags=0)
        / UDP(sport=RECONFIG_PORT, dport=RECONFIG_PORT)
        / Raw(load=payload)
    )
    return bytes(frame)


def build_reconfig_packet(
    cookie: int,
    resource_id: ResourceId,
    index: int,
    entry_bits: int,
    arrival_seq: int = 0,
) -> RawPacket:
    rp = ReconfigPacket(cookie, resource_id, index, entry_bits)
    return RawPacket(build_reconfig_frame(rp.payload()), arrival_seq=arrival_seq)


def to_raw(rp: ReconfigPacket, cookie: Optional[int] = None, arrival_seq: int = 0) -> RawPacket:
    """Frame a decoded write, optionally re-stamping the cookie."""
    if cookie is not None:
        rp = ReconfigPacket(cookie, rp.resource, rp.index, rp.entry_bits)
    return RawPacket(build_reconfig_frame(rp.payload()), arrival_seq=arrival_seq)


def parse_reconfig_packet(pkt: RawPacket) -> ReconfigPacket:
    """Byte-exact parse; rejects truncated, padded or mis-sized payloads."""
    data = pkt.data
    if not has_reconfig_framing(data):
        raise LengthMismatch("not a reconfiguration frame")
    udp_len = struct.unpack_from("!H", data, UDP_LEN_OFFSET)[0]
    if udp_len < 8 + RECONFIG_HEADER or UDP_OFFSET + udp_len != len(data):
        raise LengthMismatch(f"UDP length {udp_len} disagrees with frame length {len(data)}")
    payload = data[PAYLOAD_OFFSET:]
    try:
        resource = ResourceId.decode(struct.unpack_from("!H", payload, 4)[0])
    except WidthMismatch as e:
        raise UnknownResource(str(e)) from e
    expected = RECONFIG_HEADER + payload_len(resource.rtype)
    if len(payload) != expected:
        raise LengthMismatch(
            f"{resource} payload is {len(payload)} bytes, expected {expected}"
        )
    return ReconfigPacket.from_payload(payload)


# -----------------------
# DATA FRAMES
# -----------------------
def build_data_frame(
    vid: int,
    payload: bytes = b"",
    src_ip: str = "10.0.0.1",
    dst_ip: str = "10.0.0.2",
    sport: int = 1234,
    dport: int = 5678,
    src_mac: str = DATA_SRC_MAC,
    dst_mac: str = DATA_DST_MAC,
) -> bytes:
    frame = (
        Ether(dst=dst_mac, src=src_mac)
        / Dot1Q(vlan=vid, prio=0)
        / IP(src=src_ip, dst=dst_ip, id=0, ttl=64, flags=0)
        / UDP(sport=sport, dport=dport)
        / Raw(load=payload)
    )
    return bytes(frame)


def build_untagged_frame(payload: bytes = b"", src_ip: str = "10.0.0.1", dst_ip: str = "10.0.0.2") -> bytes:
    frame = (
        Ether(dst=DATA_DST_MAC, src=DATA_SRC_MAC)
        / IP(src=src_ip, dst=dst_ip, id=0, ttl=64, flags=0)
        / UDP(sport=1234, dport=5678)
        / Raw(load=payload)
    )
    return bytes(frame)


@dataclass
class FrameTemplate:
    """
    A frame built once with scapy, then stamped with field values by byte
    patching. Fields are (offset, width_bits) into the frame.
    """

    base: bytes
    fields: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def stamp(self, values: Dict[str, int]) -> bytes:
        out = bytearray(self.base)
        for name, value in values.items():
            offset, bits = self.fields[name]
            nbytes = bits // 8
            if offset + nbytes > len(out):
                raise LengthMismatch(f"field {name} runs past the {len(out)}-byte template")
            out[offset:offset + nbytes] = (value & ((1 << bits) - 1)).to_bytes(nbytes, "big")
        return bytes(out)


def payload_bytes(size: int, fill: Iterable[int] = ()) -> bytes:
    raw = bytes(fill)
    return raw[:size] + bytes(max(0, size - len(raw)))

# src/phv.py
"""
Packet header vector (PHV), platform metadata and raw packets.

Flattened container addressing (used by ALU operand selectors):
  0..7    two-byte containers
  8..15   four-byte containers
  16..23  six-byte containers
  24      metadata block (not a value container)

Serialized PHV (canonical dump format, 128 bytes, big-endian):
  [0:16)    2B containers 0..7
  [16:48)   4B containers 0..7
  [48:96)   6B containers 0..7
  [96:128)  metadata (layout in Metadata.to_bytes)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Tuple

from src.errors import (
    IndexOutOfRange,
    LengthMismatch,
    MetadataNotValueContainer,
    ReservedBitsSet,
    ValueTooWide,
)

CONTAINERS_PER_KIND = 8
NUM_CONTAINERS = 24
METADATA_INDEX = 24
METADATA_BYTES = 32
PHV_BYTES = 128
HEADER_REGION = 128  # bytes of each packet visible to parser / deparser


class ContainerKind(IntEnum):
    """Value is the 2-bit kind code used by parser actions and key operands."""

    TWO_BYTE = 0
    FOUR_BYTE = 1
    SIX_BYTE = 2

    @property
    def nbytes(self) -> int:
        return (2, 4, 6)[self]

    @property
    def bits(self) -> int:
        return self.nbytes * 8

    @property
    def mask(self) -> int:
        return (1 << self.bits) - 1

    @property
    def base(self) -> int:
        """Flat index of container 0 of this kind."""
        return self * CONTAINERS_PER_KIND

    @classmethod
    def for_width(cls, bits: int) -> "ContainerKind":
        for k in cls:
            if k.bits == bits:
                return k
        raise ValueTooWide(f"no container kind is {bits} bits wide")


def kind_of(flat_index: int) -> ContainerKind:
    _check_value_index(flat_index)
    return ContainerKind(flat_index // CONTAINERS_PER_KIND)


def flat_index(kind: ContainerKind, index: int) -> int:
    if not 0 <= index < CONTAINERS_PER_KIND:
        raise IndexOutOfRange(f"container index {index} not in 0..7")
    return kind.base + index


def _check_value_index(flat: int) -> None:
    if flat == METADATA_INDEX:
        raise MetadataNotValueContainer("index 24 is the metadata block")
    if not 0 <= flat < NUM_CONTAINERS:
        raise IndexOutOfRange(f"flat index {flat} not in 0..24")


# Width masks by flat index, precomputed for the data path.
WIDTH_MASKS: Tuple[int, ...] = tuple(
    ContainerKind(i // CONTAINERS_PER_KIND).mask for i in range(NUM_CONTAINERS)
)


@dataclass(frozen=True)
class Container:
    kind: ContainerKind
    value: int = 0

    def __post_init__(self):
        if not 0 <= self.value <= self.kind.mask:
            raise ValueTooWide(
                f"{self.value:#x} does not fit a {self.kind.nbytes}-byte container"
            )


# -----------------------
# METADATA
# -----------------------
@dataclass(frozen=True)
class Metadata:
    """
    Platform metadata, 32 bytes when serialized:
      byte 0 bit 0   discard
      bytes 1..4     dest_port_bitmap
      byte 5         src_port
      bytes 6..7     pkt_len
      bytes 8..9     queue_len
      bytes 10..11   link_util
      byte 12        module_slot (5 bits)
      bytes 13..14   vid (12 bits)
      rest           reserved, zero
    """

    discard: bool = False
    dest_port_bitmap: int = 0
    src_port: int = 0
    pkt_len: int = 0
    queue_len: int = 0
    link_util: int = 0
    module_slot: int = 0
    vid: int = 0

    _WIDTHS = {
        "dest_port_bitmap": 32,
        "src_port": 8,
        "pkt_len": 16,
        "queue_len": 16,
        "link_util": 16,
        "module_slot": 5,
        "vid": 12,
    }

    def __post_init__(self):
        for name, bits in self._WIDTHS.items():
            v = getattr(self, name)
            if not 0 <= v < (1 << bits):
                raise ValueTooWide(f"metadata.{name}={v} exceeds {bits} bits")

    def to_bytes(self) -> bytes:
        out = bytearray(METADATA_BYTES)
        out[0] = 1 if self.discard else 0
        out[1:5] = self.dest_port_bitmap.to_bytes(4, "big")
        out[5] = self.src_port
        out[6:8] = self.pkt_len.to_bytes(2, "big")
        out[8:10] = self.queue_len.to_bytes(2, "big")
        out[10:12] = self.link_util.to_bytes(2, "big")
        out[12] = self.module_slot
        out[13:15] = self.vid.to_bytes(2, "big")
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Metadata":
        if len(raw) != METADATA_BYTES:
            raise LengthMismatch(f"metadata is {len(raw)} bytes, expected 32")
        if raw[0] & 0xFE or raw[12] & 0xE0 or raw[13] & 0xF0 or any(raw[15:]):
            raise ReservedBitsSet("metadata reserved bits must be zero")
        return cls(
            discard=bool(raw[0] & 1),
            dest_port_bitmap=int.from_bytes(raw[1:5], "big"),
            src_port=raw[5],
            pkt_len=int.from_bytes(raw[6:8], "big"),
            queue_len=int.from_bytes(raw[8:10], "big"),
            link_util=int.from_bytes(raw[10:12], "big"),
            module_slot=raw[12],
            vid=int.from_bytes(raw[13:15], "big"),
        )


# -----------------------
# PHV
# -----------------------
@dataclass(frozen=True)
class Phv:
    values: Tuple[int, ...] = (0,) * NUM_CONTAINERS
    metadata: Metadata = field(default_factory=Metadata)

    def __post_init__(self):
        if len(self.values) != NUM_CONTAINERS:
            raise IndexOutOfRange(f"PHV needs 24 containers, got {len(self.values)}")
        for i, v in enumerate(self.values):
            if not 0 <= v <= WIDTH_MASKS[i]:
                raise ValueTooWide(f"container {i} value {v:#x} too wide")

    def to_bytes(self) -> bytes:
        out = bytearray()
        for i, v in enumerate(self.values):
            out += v.to_bytes(kind_of(i).nbytes, "big")
        out += self.metadata.to_bytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Phv":
        if len(raw) != PHV_BYTES:
            raise LengthMismatch(f"PHV dump is {len(raw)} bytes, expected 128")
        values = []
        pos = 0
        for i in range(NUM_CONTAINERS):
            n = kind_of(i).nbytes
            values.append(int.from_bytes(raw[pos:pos + n], "big"))
            pos += n
        return cls(tuple(values), Metadata.from_bytes(raw[pos:]))


def phv_zeroed() -> Phv:
    """Fresh PHV handed to the parser for every packet."""
    return Phv()


def container_get(phv: Phv, flat: int) -> Container:
    _check_value_index(flat)
    return Container(kind_of(flat), phv.values[flat])


def container_set(phv: Phv, flat: int, value: int) -> Phv:
    """Returns a new PHV; truncation is an error, never silent."""
    _check_value_index(flat)
    if not 0 <= value <= WIDTH_MASKS[flat]:
        raise ValueTooWide(f"{value:#x} does not fit container {flat}")
    values = list(phv.values)
    values[flat] = value
    return replace(phv, values=tuple(values))


def serialize(phv: Phv) -> bytes:
    return phv.to_bytes()


def deserialize(raw: bytes) -> Phv:
    return Phv.from_bytes(raw)


# -----------------------
# RAW PACKETS
# -----------------------
@dataclass(frozen=True)
class RawPacket:
    data: bytes
    arrival_seq: int = 0
    ingress_port: int = 0

    @property
    def header_region(self) -> bytes:
        return self.data[:HEADER_REGION]

    def hex(self) -> str:
        return self.data.hex()

    def __len__(self) -> int:
        return len(self.data)

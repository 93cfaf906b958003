# src/formats.py
"""
Bit-exact table entry codecs.

Every entry type encodes to an unsigned int of exactly WIDTH bits
(MSB-first field order as documented on each class) and decodes back.
Decoding rejects words wider than WIDTH and any non-zero reserved bits, so a
single flipped bit either changes the decoded value or raises.

Widths (bits) / depths:
  parser & deparser entry  160 / 32      key extractor  38 / 32
  key mask                 193 / 32      CAM            205 / 16 per stage
  VLIW                     625 / 16      page table     16 / 32
  memory word              32 / 256      registry       16 / 32
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Tuple

from src.errors import (
    FormatError,
    IndexOutOfRange,
    InvalidKind,
    InvalidOpcode,
    LengthMismatch,
    ReservedBitsSet,
    UnknownResource,
    WidthMismatch,
)
from src.phv import METADATA_INDEX, NUM_CONTAINERS


# -----------------------
# GEOMETRY
# -----------------------
@dataclass(frozen=True)
class TableGeometry:
    parser_depth: int = 32
    deparser_depth: int = 32
    key_extractor_depth: int = 32
    key_mask_depth: int = 32
    cam_depth: int = 16
    vliw_depth: int = 16
    page_table_depth: int = 32
    memory_words: int = 256
    num_stages: int = 5
    parse_actions: int = 10
    max_modules: int = 32

    @property
    def user_stages(self) -> Tuple[int, ...]:
        # stage 1 and the last stage belong to the system module
        return tuple(range(2, self.num_stages))


GEOMETRY = TableGeometry()

KEY_BITS = 193
PREDICATE_BIT = 192
VID_BITS = 12
CONTROL_VID = 0xFFF  # reconfiguration framing; also clears a CAM row
SYSTEM_VID = 0
IMMEDIATE_SEL = 31


def _check_width(word: int, width: int, what: str) -> None:
    if word < 0 or word >> width:
        raise WidthMismatch(f"{what}: value does not fit {width} bits")


def _check_field(value: int, bits: int, what: str) -> None:
    if not 0 <= value < (1 << bits):
        raise WidthMismatch(f"{what}={value} does not fit {bits} bits")


# -----------------------
# PARSER / DEPARSER
# -----------------------
@dataclass(frozen=True)
class ParseAction:
    """[15:13] reserved, [12:6] bytes from head, [5:4] kind, [3:1] index, [0] valid."""

    offset: int = 0
    kind: int = 0
    index: int = 0
    valid: bool = False

    WIDTH = 16

    def encode(self) -> int:
        _check_field(self.offset, 7, "bytes_from_head")
        _check_field(self.kind, 2, "container_kind")
        _check_field(self.index, 3, "container_index")
        if self.valid and self.kind == 3:
            raise InvalidKind("kind 11 is not a container kind")
        return (self.offset << 6) | (self.kind << 4) | (self.index << 1) | int(self.valid)

    @classmethod
    def decode(cls, word: int) -> "ParseAction":
        _check_width(word, cls.WIDTH, "parse action")
        if word >> 13:
            raise ReservedBitsSet(f"parse action {word:#06x} has reserved bits set")
        action = cls(
            offset=(word >> 6) & 0x7F,
            kind=(word >> 4) & 0x3,
            index=(word >> 1) & 0x7,
            valid=bool(word & 1),
        )
        if action.valid and action.kind == 3:
            raise InvalidKind(f"parse action {word:#06x} uses kind 11")
        return action


def encode_parse_action(action: ParseAction) -> int:
    return action.encode()


def decode_parse_action(word: int) -> ParseAction:
    return ParseAction.decode(word)


@dataclass(frozen=True)
class ParserEntry:
    """Ten parse actions, action 0 in the most significant 16 bits."""

    actions: Tuple[ParseAction, ...] = (ParseAction(),) * 10

    WIDTH = 160

    def __post_init__(self):
        if len(self.actions) != GEOMETRY.parse_actions:
            raise WidthMismatch(f"parser entry needs 10 actions, got {len(self.actions)}")

    @classmethod
    def of(cls, actions) -> "ParserEntry":
        acts = list(actions)
        if len(acts) > GEOMETRY.parse_actions:
            raise WidthMismatch(f"{len(acts)} parse actions exceed 10")
        acts += [ParseAction()] * (GEOMETRY.parse_actions - len(acts))
        return cls(tuple(acts))

    def encode(self) -> int:
        word = 0
        for a in self.actions:
            if not a.valid and a != ParseAction():
                raise ReservedBitsSet("invalid parse actions must be all-zero")
            word = (word << 16) | a.encode()
        return word

    @classmethod
    def decode(cls, word: int) -> "ParserEntry":
        _check_width(word, cls.WIDTH, "parser entry")
        acts = []
        for i in range(GEOMETRY.parse_actions):
            sub = (word >> (16 * (GEOMETRY.parse_actions - 1 - i))) & 0xFFFF
            a = ParseAction.decode(sub)
            if not a.valid and sub:
                raise ReservedBitsSet(f"invalid parse action {i} is not all-zero")
            acts.append(a)
        return cls(tuple(acts))

    @property
    def valid_actions(self) -> Tuple[ParseAction, ...]:
        return tuple(a for a in self.actions if a.valid)


# -----------------------
# KEY EXTRACTOR
# -----------------------
class CmpOp(IntEnum):
    NEVER = 0x0
    EQ = 0x1
    NE = 0x2
    GT = 0x3
    GE = 0x4
    LT = 0x5
    LE = 0x6
    ALWAYS = 0x7


class MetaStat(IntEnum):
    """Operand kind 11 index: metadata statistics visible to predicates."""

    LINK_UTIL = 0
    QUEUE_LEN = 1
    PKT_LEN = 2
    EGRESS = 3


@dataclass(frozen=True)
class KeyOperand:
    """
    One predicate operand byte:
      bit7=1  -> bits[6:0] immediate
      bit7=0  -> bits[6:5] kind (11 = metadata statistic), bits[4:2] index,
                 bits[1:0] reserved
    """

    immediate: bool = False
    value: int = 0
    kind: int = 0

    def encode(self) -> int:
        if self.immediate:
            _check_field(self.value, 7, "predicate immediate")
            return 0x80 | self.value
        _check_field(self.kind, 2, "operand kind")
        _check_field(self.value, 3, "operand index")
        if self.kind == 3 and self.value > max(MetaStat):
            raise InvalidKind(f"metadata statistic {self.value} does not exist")
        return (self.kind << 5) | (self.value << 2)

    @classmethod
    def decode(cls, byte: int) -> "KeyOperand":
        _check_width(byte, 8, "predicate operand")
        if byte & 0x80:
            return cls(immediate=True, value=byte & 0x7F)
        if byte & 0x3:
            raise ReservedBitsSet(f"operand byte {byte:#04x} has reserved bits set")
        op = cls(immediate=False, value=(byte >> 2) & 0x7, kind=(byte >> 5) & 0x3)
        if op.kind == 3 and op.value > max(MetaStat):
            raise InvalidKind(f"operand byte {byte:#04x} names no statistic")
        return op


@dataclass(frozen=True)
class KeyExtractorEntry:
    """
    [37:20] six 3-bit selectors (2B-A, 2B-B, 4B-A, 4B-B, 6B-A, 6B-B),
    [19:16] cmp opcode, [15:8] operand A, [7:0] operand B.
    """

    selectors: Tuple[int, ...] = (0,) * 6
    cmp: CmpOp = CmpOp.NEVER
    operand_a: KeyOperand = KeyOperand()
    operand_b: KeyOperand = KeyOperand()

    WIDTH = 38

    def encode(self) -> int:
        if len(self.selectors) != 6:
            raise WidthMismatch("key extractor needs 6 selectors")
        word = 0
        for s in self.selectors:
            _check_field(s, 3, "selector")
            word = (word << 3) | s
        return (
            (word << 20)
            | (int(self.cmp) << 16)
            | (self.operand_a.encode() << 8)
            | self.operand_b.encode()
        )

    @classmethod
    def decode(cls, word: int) -> "KeyExtractorEntry":
        _check_width(word, cls.WIDTH, "key extractor entry")
        sels = tuple((word >> (20 + 3 * (5 - i))) & 0x7 for i in range(6))
        op = (word >> 16) & 0xF
        if op > max(CmpOp):
            raise InvalidOpcode(f"comparison opcode {op:#x} undefined")
        return cls(
            selectors=sels,
            cmp=CmpOp(op),
            operand_a=KeyOperand.decode((word >> 8) & 0xFF),
            operand_b=KeyOperand.decode(word & 0xFF),
        )


# Key slot layout inside the 193-bit key: (kind code, bit offset of LSB)
KEY_SLOTS: Tuple[Tuple[int, int], ...] = (
    (0, 176),  # 2B-A  bits 191..176
    (0, 160),  # 2B-B  bits 175..160
    (1, 128),  # 4B-A  bits 159..128
    (1, 96),   # 4B-B  bits 127..96
    (2, 48),   # 6B-A  bits 95..48
    (2, 0),    # 6B-B  bits 47..0
)


def slot_mask(slot: int) -> int:
    kind, lsb = KEY_SLOTS[slot]
    return ((1 << ((2, 4, 6)[kind] * 8)) - 1) << lsb


@dataclass(frozen=True)
class KeyMaskEntry:
    mask: int = 0

    WIDTH = KEY_BITS

    def encode(self) -> int:
        _check_width(self.mask, self.WIDTH, "key mask")
        return self.mask

    @classmethod
    def decode(cls, word: int) -> "KeyMaskEntry":
        _check_width(word, cls.WIDTH, "key mask")
        return cls(word)


# -----------------------
# EXACT MATCH
# -----------------------
@dataclass(frozen=True)
class CamEntry:
    """[204:193] VID, [192:0] key."""

    vid: int = CONTROL_VID
    key: int = 0

    WIDTH = KEY_BITS + VID_BITS

    def encode(self) -> int:
        _check_field(self.vid, VID_BITS, "vid")
        _check_width(self.key, KEY_BITS, "CAM key")
        return (self.vid << KEY_BITS) | self.key

    @classmethod
    def decode(cls, word: int) -> "CamEntry":
        _check_width(word, cls.WIDTH, "CAM entry")
        return cls(vid=word >> KEY_BITS, key=word & ((1 << KEY_BITS) - 1))

    @property
    def cleared(self) -> bool:
        return self.vid == CONTROL_VID


# -----------------------
# VLIW
# -----------------------
class Opcode(IntEnum):
    NOP = 0x0
    ADD = 0x1
    SUB = 0x2
    ADDI = 0x3
    SUBI = 0x4
    SET = 0x5
    LOAD = 0x6
    STORE = 0x7
    LOADD = 0x8
    PORT = 0x9
    DISCARD = 0xA


MEMORY_OPS = frozenset({Opcode.LOAD, Opcode.STORE, Opcode.LOADD})
METADATA_OPS = frozenset({Opcode.NOP, Opcode.PORT, Opcode.SET, Opcode.DISCARD})
CONTAINER_OPS = frozenset(Opcode) - {Opcode.PORT, Opcode.DISCARD}


@dataclass(frozen=True)
class AluAction:
    """[24:21] opcode, [20:16] operand A select, [15:11] operand B select, [10:0] imm."""

    opcode: Opcode = Opcode.NOP
    op_a: int = 0
    op_b: int = 0
    imm: int = 0

    WIDTH = 25

    def encode(self) -> int:
        if self.opcode not in set(Opcode):
            raise InvalidOpcode(f"opcode {self.opcode} undefined")
        for name, sel in (("op_a", self.op_a), ("op_b", self.op_b)):
            if not (0 <= sel <= METADATA_INDEX or sel == IMMEDIATE_SEL):
                raise InvalidKind(f"{name} selector {sel} is neither a container nor immediate")
        _check_field(self.imm, 11, "imm")
        return (int(self.opcode) << 21) | (self.op_a << 16) | (self.op_b << 11) | self.imm

    @classmethod
    def decode(cls, word: int) -> "AluAction":
        _check_width(word, cls.WIDTH, "ALU action")
        op = word >> 21
        if op > max(Opcode):
            raise InvalidOpcode(f"opcode {op:#x} undefined")
        a, b = (word >> 16) & 0x1F, (word >> 11) & 0x1F
        for sel in (a, b):
            if METADATA_INDEX < sel < IMMEDIATE_SEL:
                raise InvalidKind(f"operand selector {sel} undefined")
        return cls(Opcode(op), a, b, word & 0x7FF)


NOP = AluAction()


@dataclass(frozen=True)
class VliwEntry:
    """25 ALU actions; action i (i=0 most significant) drives container i."""

    actions: Tuple[AluAction, ...] = (NOP,) * 25

    WIDTH = 25 * 25

    def __post_init__(self):
        if len(self.actions) != NUM_CONTAINERS + 1:
            raise WidthMismatch(f"VLIW entry needs 25 actions, got {len(self.actions)}")

    @classmethod
    def of(cls, by_index: Dict[int, AluAction]) -> "VliwEntry":
        acts = [NOP] * (NUM_CONTAINERS + 1)
        for i, a in by_index.items():
            if not 0 <= i <= METADATA_INDEX:
                raise IndexOutOfRange(f"ALU {i} does not exist")
            acts[i] = a
        return cls(tuple(acts))

    def _validate(self) -> None:
        for i, a in enumerate(self.actions):
            allowed = METADATA_OPS if i == METADATA_INDEX else CONTAINER_OPS
            if a.opcode not in allowed:
                raise InvalidOpcode(f"{a.opcode.name.lower()} not allowed on ALU {i}")

    def encode(self) -> int:
        self._validate()
        word = 0
        for a in self.actions:
            word = (word << 25) | a.encode()
        return word

    @classmethod
    def decode(cls, word: int) -> "VliwEntry":
        _check_width(word, cls.WIDTH, "VLIW entry")
        n = NUM_CONTAINERS + 1
        acts = tuple(AluAction.decode((word >> (25 * (n - 1 - i))) & 0x1FFFFFF) for i in range(n))
        entry = cls(acts)
        entry._validate()
        return entry

    @property
    def is_nop(self) -> bool:
        return all(a.opcode == Opcode.NOP for a in self.actions)


# -----------------------
# PAGE TABLE / MEMORY / REGISTRY
# -----------------------
@dataclass(frozen=True)
class PageTableEntry:
    """[15:8] base word, [7:0] range (word count)."""

    base: int = 0
    range: int = 0

    WIDTH = 16

    def encode(self) -> int:
        _check_field(self.base, 8, "base")
        _check_field(self.range, 8, "range")
        if self.base + self.range > GEOMETRY.memory_words:
            raise FormatError(f"page slice {self.base}+{self.range} exceeds 256 words")
        return (self.base << 8) | self.range

    @classmethod
    def decode(cls, word: int) -> "PageTableEntry":
        _check_width(word, cls.WIDTH, "page table entry")
        entry = cls(word >> 8, word & 0xFF)
        entry.encode()
        return entry


@dataclass(frozen=True)
class MemoryWord:
    value: int = 0

    WIDTH = 32

    def encode(self) -> int:
        _check_width(self.value, self.WIDTH, "memory word")
        return self.value

    @classmethod
    def decode(cls, word: int) -> "MemoryWord":
        _check_width(word, cls.WIDTH, "memory word")
        return cls(word)


@dataclass(frozen=True)
class RegistryEntry:
    """[15] valid, [14:12] reserved, [11:0] VID."""

    vid: int = 0
    valid: bool = False

    WIDTH = 16

    def encode(self) -> int:
        _check_field(self.vid, VID_BITS, "vid")
        if not self.valid and self.vid:
            raise ReservedBitsSet("an unbound registry row carries no VID")
        return (int(self.valid) << 15) | self.vid

    @classmethod
    def decode(cls, word: int) -> "RegistryEntry":
        _check_width(word, cls.WIDTH, "registry entry")
        if word & 0x7000:
            raise ReservedBitsSet(f"registry entry {word:#06x} has reserved bits set")
        entry = cls(vid=word & 0xFFF, valid=bool(word >> 15))
        entry.encode()
        return entry


# -----------------------
# RESOURCE IDS
# -----------------------
class ResourceType(IntEnum):
    PARSER = 0x00
    KEY_EXTRACTOR = 0x01
    KEY_MASK = 0x02
    CAM = 0x03
    VLIW = 0x04
    PAGE_TABLE = 0x05
    MEMORY_WORD = 0x06
    DEPARSER = 0x07
    REGISTRY = 0x08


STAGE_PARSER = 0
STAGE_DEPARSER = 6
STAGE_REGISTRY = 7

ENTRY_TYPES: Dict[ResourceType, type] = {
    ResourceType.PARSER: ParserEntry,
    ResourceType.KEY_EXTRACTOR: KeyExtractorEntry,
    ResourceType.KEY_MASK: KeyMaskEntry,
    ResourceType.CAM: CamEntry,
    ResourceType.VLIW: VliwEntry,
    ResourceType.PAGE_TABLE: PageTableEntry,
    ResourceType.MEMORY_WORD: MemoryWord,
    ResourceType.DEPARSER: ParserEntry,
    ResourceType.REGISTRY: RegistryEntry,
}

# row count per resource (index field must stay below it)
DEPTHS: Dict[ResourceType, int] = {
    ResourceType.PARSER: GEOMETRY.parser_depth,
    ResourceType.KEY_EXTRACTOR: GEOMETRY.key_extractor_depth,
    ResourceType.KEY_MASK: GEOMETRY.key_mask_depth,
    ResourceType.CAM: GEOMETRY.cam_depth,
    ResourceType.VLIW: GEOMETRY.vliw_depth,
    ResourceType.PAGE_TABLE: GEOMETRY.page_table_depth,
    ResourceType.MEMORY_WORD: GEOMETRY.memory_words,
    ResourceType.DEPARSER: GEOMETRY.deparser_depth,
    ResourceType.REGISTRY: GEOMETRY.max_modules,
}


def entry_width(rtype: ResourceType) -> int:
    return ENTRY_TYPES[rtype].WIDTH


def payload_len(rtype: ResourceType) -> int:
    return (entry_width(rtype) + 7) // 8


@dataclass(frozen=True)
class ResourceId:
    """16-bit field: [15:12] zero, [11:8] stage selector, [7:0] resource type."""

    stage: int
    rtype: ResourceType

    def __post_init__(self):
        if not _stage_ok(self.stage, self.rtype):
            raise UnknownResource(f"resource {int(self.rtype):#04x} does not exist at stage {self.stage}")

    def encode(self) -> int:
        return (self.stage << 8) | int(self.rtype)

    @classmethod
    def decode(cls, word: int) -> "ResourceId":
        _check_width(word, 16, "resource id")
        if word >> 12:
            raise ReservedBitsSet(f"resource id {word:#06x} has reserved bits set")
        code = word & 0xFF
        try:
            rtype = ResourceType(code)
        except ValueError:
            raise UnknownResource(f"resource type {code:#04x} undefined") from None
        return cls((word >> 8) & 0xF, rtype)

    def __str__(self) -> str:
        return f"{self.rtype.name.lower()}@{self.stage}"


def _stage_ok(stage: int, rtype: ResourceType) -> bool:
    if rtype == ResourceType.PARSER:
        return stage == STAGE_PARSER
    if rtype == ResourceType.DEPARSER:
        return stage == STAGE_DEPARSER
    if rtype == ResourceType.REGISTRY:
        return stage == STAGE_REGISTRY
    return 1 <= stage <= GEOMETRY.num_stages


# -----------------------
# GENERIC ENTRY <-> BYTES
# -----------------------
def encode_entry(rtype: ResourceType, entry) -> int:
    if not isinstance(entry, ENTRY_TYPES[rtype]):
        raise WidthMismatch(f"{type(entry).__name__} is not a {rtype.name.lower()} entry")
    return entry.encode()


def decode_entry(rtype: ResourceType, word: int):
    return ENTRY_TYPES[rtype].decode(word)


def entry_to_bytes(rtype: ResourceType, word: int) -> bytes:
    """Big-endian, padded to a byte boundary with leading zero bits."""
    _check_width(word, entry_width(rtype), rtype.name.lower())
    return word.to_bytes(payload_len(rtype), "big")


def entry_from_bytes(rtype: ResourceType, raw: bytes) -> int:
    if len(raw) != payload_len(rtype):
        raise LengthMismatch(
            f"{rtype.name.lower()} payload is {len(raw)} bytes, expected {payload_len(rtype)}"
        )
    word = int.from_bytes(raw, "big")
    _check_width(word, entry_width(rtype), rtype.name.lower())
    return word


@dataclass(frozen=True)
class ReconfigPacket:
    """Decoded reconfiguration payload: one table row write."""

    cookie: int
    resource: ResourceId
    index: int
    entry_bits: int

    def __post_init__(self):
        _check_field(self.cookie, 32, "cookie")
        # depth bounds are checked at apply time
        _check_field(self.index, 8, "index")
        _check_width(self.entry_bits, entry_width(self.resource.rtype), "entry")

    @property
    def entry(self):
        return decode_entry(self.resource.rtype, self.entry_bits)

    def payload(self) -> bytes:
        return (
            self.cookie.to_bytes(4, "big")
            + self.resource.encode().to_bytes(2, "big")
            + bytes([self.index])
            + entry_to_bytes(self.resource.rtype, self.entry_bits)
        )

    @classmethod
    def from_payload(cls, raw: bytes) -> "ReconfigPacket":
        if len(raw) < 7:
            raise LengthMismatch(f"reconfiguration payload is {len(raw)} bytes")
        resource = ResourceId.decode(int.from_bytes(raw[4:6], "big"))
        body = raw[7:]
        return cls(
            cookie=int.from_bytes(raw[0:4], "big"),
            resource=resource,
            index=raw[6],
            entry_bits=entry_from_bytes(resource.rtype, body),
        )


def make_write(resource: ResourceId, index: int, entry, cookie: int = 0) -> ReconfigPacket:
    return ReconfigPacket(cookie, resource, index, encode_entry(resource.rtype, entry))


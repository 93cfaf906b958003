# tests/test_formats.py
import random

import pytest

from src.errors import (
    FormatError,
    InvalidKind,
    InvalidOpcode,
    LengthMismatch,
    ReservedBitsSet,
    UnknownResource,
    WidthMismatch,
)
from src.formats import (
    CONTAINER_OPS,
    IMMEDIATE_SEL,
    KEY_BITS,
    METADATA_OPS,
    PREDICATE_BIT,
    AluAction,
    CamEntry,
    CmpOp,
    KeyExtractorEntry,
    KeyMaskEntry,
    KeyOperand,
    MemoryWord,
    Opcode,
    PageTableEntry,
    ParseAction,
    ParserEntry,
    ReconfigPacket,
    RegistryEntry,
    ResourceId,
    ResourceType,
    VliwEntry,
    decode_entry,
    encode_entry,
    entry_from_bytes,
    entry_to_bytes,
    entry_width,
    make_write,
    payload_len,
    slot_mask,
)
from src.phv import METADATA_INDEX
from src.utils import read_hex_lines
from tests.conftest import COOKIE, GOLDEN_DIR


# -- golden payloads -------------------------------------------------------
GOLDEN_WRITES = [
    make_write(ResourceId(7, ResourceType.REGISTRY), 1, RegistryEntry(vid=10, valid=True), COOKIE),
    make_write(ResourceId(2, ResourceType.PAGE_TABLE), 3, PageTableEntry(base=16, range=8), COOKIE),
    make_write(ResourceId(4, ResourceType.MEMORY_WORD), 200, MemoryWord(0xDEADBEEF), COOKIE),
    make_write(ResourceId(3, ResourceType.CAM), 0, CamEntry(vid=10, key=(1 << PREDICATE_BIT) | 5), COOKIE),
    make_write(ResourceId(2, ResourceType.KEY_MASK), 1, KeyMaskEntry(slot_mask(0) | (1 << PREDICATE_BIT)), COOKIE),
]


def test_payloads_match_golden_vectors():
    golden = read_hex_lines(GOLDEN_DIR / "reconfig_payloads.hex")
    assert len(golden) == len(GOLDEN_WRITES)
    for pkt, expected in zip(GOLDEN_WRITES, golden):
        assert pkt.payload() == expected, str(pkt.resource)


def test_golden_vectors_decode_back():
    for raw in read_hex_lines(GOLDEN_DIR / "reconfig_payloads.hex"):
        pkt = ReconfigPacket.from_payload(raw)
        assert pkt.cookie == COOKIE
        assert pkt.payload() == raw


def test_payload_lengths():
    assert payload_len(ResourceType.PARSER) == 20
    assert payload_len(ResourceType.KEY_EXTRACTOR) == 5
    assert payload_len(ResourceType.KEY_MASK) == 25
    assert payload_len(ResourceType.CAM) == 26
    assert payload_len(ResourceType.VLIW) == 79
    assert payload_len(ResourceType.REGISTRY) == 2


# -- parse actions ---------------------------------------------------------
def test_parse_action_layout():
    a = ParseAction(offset=46, kind=1, index=2, valid=True)
    assert a.encode() == (46 << 6) | (1 << 4) | (2 << 1) | 1
    assert ParseAction.decode(a.encode()) == a


def test_parse_action_rejects_kind_three_and_reserved_bits():
    with pytest.raises(InvalidKind):
        ParseAction(offset=0, kind=3, index=0, valid=True).encode()
    with pytest.raises(ReservedBitsSet):
        ParseAction.decode(1 << 13)


def test_parser_entry_invalid_slots_must_be_zero():
    entry = ParserEntry.of([ParseAction(14, 0, 0, True)])
    word = entry.encode()
    assert ParserEntry.decode(word).valid_actions == (ParseAction(14, 0, 0, True),)
    with pytest.raises(ReservedBitsSet):
        ParserEntry.decode(word | 0x40)  # offset bits in the last, invalid action
    with pytest.raises(WidthMismatch):
        ParserEntry.of([ParseAction()] * 11)


# -- key extractor ---------------------------------------------------------
def test_key_operand_forms():
    assert KeyOperand(immediate=True, value=50).encode() == 0x80 | 50
    with pytest.raises(WidthMismatch):
        KeyOperand(immediate=True, value=128).encode()
    with pytest.raises(ReservedBitsSet):
        KeyOperand.decode(0x01)
    with pytest.raises(InvalidKind):
        KeyOperand.decode((3 << 5) | (7 << 2))


def test_key_extractor_roundtrip_and_bad_cmp():
    entry = KeyExtractorEntry(
        selectors=(1, 0, 3, 0, 0, 0),
        cmp=CmpOp.GT,
        operand_a=KeyOperand(kind=3, value=1),
        operand_b=KeyOperand(immediate=True, value=50),
    )
    assert KeyExtractorEntry.decode(entry.encode()) == entry
    with pytest.raises(InvalidOpcode):
        KeyExtractorEntry.decode(0x8 << 16)


def test_slot_masks_do_not_overlap():
    seen = 0
    for slot in range(6):
        m = slot_mask(slot)
        assert seen & m == 0
        seen |= m
    assert seen == (1 << PREDICATE_BIT) - 1


# -- cam / vliw ------------------------------------------------------------
def test_cam_entry_default_is_cleared():
    assert CamEntry().cleared
    assert not CamEntry(vid=10, key=1).cleared
    e = CamEntry(vid=10, key=(1 << PREDICATE_BIT) | 5)
    assert CamEntry.decode(e.encode()) == e


def test_alu_action_validation():
    with pytest.raises(WidthMismatch):
        AluAction(Opcode.ADDI, 0, 0, 2048).encode()
    with pytest.raises(InvalidKind):
        AluAction(Opcode.ADD, 25, 0).encode()
    with pytest.raises(InvalidOpcode):
        AluAction.decode(0xB << 21)
    assert AluAction(Opcode.ADDI, 31, 0, 2047).encode() & 0x7FF == 2047


def test_vliw_opcode_placement():
    entry = VliwEntry.of({10: AluAction(Opcode.ADD, 8, 9), 24: AluAction(Opcode.PORT, imm=1)})
    assert VliwEntry.decode(entry.encode()) == entry
    with pytest.raises(InvalidOpcode):
        VliwEntry.of({3: AluAction(Opcode.PORT, imm=1)}).encode()
    with pytest.raises(InvalidOpcode):
        VliwEntry.of({24: AluAction(Opcode.ADD, 0, 1)}).encode()


# -- page table / registry -------------------------------------------------
def test_page_slice_must_fit_memory():
    with pytest.raises(FormatError):
        PageTableEntry(base=250, range=10).encode()
    assert PageTableEntry(base=248, range=8).encode() == (248 << 8) | 8


def test_registry_bit_flips():
    good = RegistryEntry(vid=10, valid=True).encode()
    for bit in (12, 13, 14):
        with pytest.raises(ReservedBitsSet):
            RegistryEntry.decode(good ^ (1 << bit))
    # valid bit cleared with a VID still present
    with pytest.raises(ReservedBitsSet):
        RegistryEntry.decode(good ^ (1 << 15))
    assert RegistryEntry.decode(0) == RegistryEntry()


# -- every entry type --------------------------------------------------------
def _operand(rng):
    if rng.random() < 0.5:
        return KeyOperand(immediate=True, value=rng.randrange(128))
    kind = rng.randrange(4)
    return KeyOperand(immediate=False, value=rng.randrange(4 if kind == 3 else 8), kind=kind)


def _alu(rng, allowed):
    def sel():
        return rng.choice([rng.randrange(METADATA_INDEX + 1), IMMEDIATE_SEL])

    return AluAction(rng.choice(sorted(allowed)), sel(), sel(), rng.randrange(1 << 11))


def _random_entry(rtype, rng):
    if rtype in (ResourceType.PARSER, ResourceType.DEPARSER):
        n = rng.randint(0, 10)
        return ParserEntry.of([ParseAction(rng.randrange(128), rng.randrange(3), rng.randrange(8), True) for _ in range(n)])
    if rtype == ResourceType.KEY_EXTRACTOR:
        return KeyExtractorEntry(
            selectors=tuple(rng.randrange(8) for _ in range(6)),
            cmp=CmpOp(rng.randrange(8)),
            operand_a=_operand(rng),
            operand_b=_operand(rng),
        )
    if rtype == ResourceType.KEY_MASK:
        return KeyMaskEntry(rng.getrandbits(KEY_BITS))
    if rtype == ResourceType.CAM:
        return CamEntry(vid=rng.randrange(1 << 12), key=rng.getrandbits(KEY_BITS))
    if rtype == ResourceType.VLIW:
        acts = {i: _alu(rng, CONTAINER_OPS) for i in rng.sample(range(METADATA_INDEX), rng.randint(0, 6))}
        if rng.random() < 0.5:
            acts[METADATA_INDEX] = _alu(rng, METADATA_OPS)
        return VliwEntry.of(acts)
    if rtype == ResourceType.PAGE_TABLE:
        base = rng.randrange(256)
        return PageTableEntry(base=base, range=rng.randrange(min(256 - base, 255) + 1))
    if rtype == ResourceType.MEMORY_WORD:
        return MemoryWord(rng.getrandbits(32))
    valid = rng.random() < 0.7
    return RegistryEntry(vid=rng.randrange(1 << 12) if valid else 0, valid=valid)


@pytest.mark.parametrize("rtype", list(ResourceType), ids=lambda r: r.name.lower())
def test_entries_survive_the_wire_and_detect_flips(rtype):
    rng = random.Random(int(rtype))
    width = entry_width(rtype)
    for _ in range(200):
        entry = _random_entry(rtype, rng)
        word = encode_entry(rtype, entry)
        raw = entry_to_bytes(rtype, word)
        assert len(raw) == payload_len(rtype)
        assert decode_entry(rtype, entry_from_bytes(rtype, raw)) == entry

        flipped = word ^ (1 << rng.randrange(width))
        try:
            other = decode_entry(rtype, flipped)
        except FormatError:
            continue
        assert other != entry


# -- resource ids / payloads -----------------------------------------------
def test_resource_ids():
    assert str(ResourceId(3, ResourceType.CAM)) == "cam@3"
    assert ResourceId.decode(0x0708) == ResourceId(7, ResourceType.REGISTRY)
    with pytest.raises(UnknownResource):
        ResourceId.decode(0x0209)
    with pytest.raises(UnknownResource):
        ResourceId(2, ResourceType.REGISTRY)
    with pytest.raises(UnknownResource):
        ResourceId(6, ResourceType.CAM)
    with pytest.raises(ReservedBitsSet):
        ResourceId.decode(0x1203)


def test_payload_length_mismatch():
    raw = GOLDEN_WRITES[0].payload()
    with pytest.raises(LengthMismatch):
        ReconfigPacket.from_payload(raw + b"\x00")
    with pytest.raises(LengthMismatch):
        ReconfigPacket.from_payload(raw[:-1])
    with pytest.raises(LengthMismatch):
        ReconfigPacket.from_payload(raw[:5])


def test_entry_from_bytes_checks_width():
    with pytest.raises(LengthMismatch):
        entry_from_bytes(ResourceType.CAM, bytes(25))
    # 26 bytes carry 208 bits; a CAM entry is 205
    with pytest.raises(WidthMismatch):
        entry_from_bytes(ResourceType.CAM, b"\x80" + bytes(25))
    word = entry_from_bytes(ResourceType.REGISTRY, b"\x80\x0a")
    assert decode_entry(ResourceType.REGISTRY, word) == RegistryEntry(vid=10, valid=True)


def test_make_write_checks_entry_type():
    with pytest.raises(WidthMismatch):
        make_write(ResourceId(2, ResourceType.CAM), 0, MemoryWord(1), COOKIE)

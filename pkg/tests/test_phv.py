# tests/test_phv.py
import pytest

from src.errors import IndexOutOfRange, LengthMismatch, MetadataNotValueContainer, ReservedBitsSet, ValueTooWide
from src.phv import (
    METADATA_INDEX,
    PHV_BYTES,
    ContainerKind,
    Metadata,
    Phv,
    container_get,
    container_set,
    deserialize,
    flat_index,
    kind_of,
    phv_zeroed,
    serialize,
)


def test_flat_addressing():
    assert kind_of(0) == ContainerKind.TWO_BYTE
    assert kind_of(8) == ContainerKind.FOUR_BYTE
    assert kind_of(23) == ContainerKind.SIX_BYTE
    assert flat_index(ContainerKind.SIX_BYTE, 7) == 23


def test_set_and_get_respect_width():
    phv = container_set(phv_zeroed(), 3, 0xFFFF)
    assert container_get(phv, 3).value == 0xFFFF
    with pytest.raises(ValueTooWide):
        container_set(phv, 3, 0x10000)
    phv = container_set(phv, 20, (1 << 48) - 1)
    assert container_get(phv, 20).value == (1 << 48) - 1


def test_metadata_is_not_a_value_container():
    with pytest.raises(MetadataNotValueContainer):
        container_get(phv_zeroed(), METADATA_INDEX)
    with pytest.raises(IndexOutOfRange):
        container_set(phv_zeroed(), 25, 0)


def test_zeroed_phv_serializes_to_128_zero_bytes():
    assert serialize(phv_zeroed()) == bytes(PHV_BYTES)


def test_serialized_layout():
    meta = Metadata(dest_port_bitmap=0b1010, pkt_len=78, queue_len=5, link_util=9, module_slot=3, vid=10)
    values = [0] * 24
    values[0] = 0x1234
    values[8] = 0xDEADBEEF
    values[16] = 0x0102030405
    raw = serialize(Phv(tuple(values), meta))
    assert raw[0:2] == b"\x12\x34"
    assert raw[16:20] == b"\xde\xad\xbe\xef"
    assert raw[48:54] == bytes.fromhex("000102030405")
    assert raw[96 + 1:96 + 5] == (0b1010).to_bytes(4, "big")
    assert raw[96 + 12] == 3
    assert deserialize(raw) == Phv(tuple(values), meta)


def test_metadata_reserved_bits_rejected():
    raw = bytearray(Metadata().to_bytes())
    raw[20] = 1
    with pytest.raises(ReservedBitsSet):
        Metadata.from_bytes(bytes(raw))
    with pytest.raises(LengthMismatch):
        Phv.from_bytes(bytes(127))


def test_metadata_field_widths():
    with pytest.raises(ValueTooWide):
        Metadata(module_slot=32)
    with pytest.raises(ValueTooWide):
        Metadata(vid=0x1000)

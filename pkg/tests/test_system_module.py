# tests/test_system_module.py
import pytest

from src.errors import ConfigError, RouteTableOverflow
from src.frames import ip_to_int
from src.pipeline import DropReason
from src.system_module import SystemConfig, Tenant, build_system_module, counter_words, load_system_config
from tests.conftest import data_frame

PLAIN = "module plain;"


def _egress_ip(out):
    return int.from_bytes(out.egress_packet.data[34:38], "big")


def test_route_picks_port(controller):
    controller.load_module(PLAIN, 10)
    out = controller.inject(data_frame(10, dst_ip="10.0.0.3"))
    assert out.ports == (2,)
    assert _egress_ip(out) == ip_to_int("10.0.0.3")


def test_multicast_group(controller):
    controller.load_module(PLAIN, 11)
    out = controller.inject(data_frame(11, dst_ip="10.0.0.100"))
    assert out.ports == (1, 3)


def test_virtual_ip_rewritten_to_physical(controller):
    controller.load_module(PLAIN, 10)
    out = controller.inject(data_frame(10, dst_ip="10.1.0.1"))
    assert out.ports == (2,)
    assert _egress_ip(out) == ip_to_int("10.0.0.3")


def test_virtual_ip_belongs_to_one_tenant(controller):
    controller.load_module(PLAIN, 11)
    out = controller.inject(data_frame(11, dst_ip="10.1.0.1"))
    assert out.reason == DropReason.NO_ROUTE.value


def test_unknown_destination_has_no_route(controller):
    controller.load_module(PLAIN, 12)
    assert controller.inject(data_frame(12, dst_ip="10.9.9.9")).reason == DropReason.NO_ROUTE.value
    assert controller.packet_counters()[3] == 0


def test_lookup_matches_route_table(system_config):
    assert system_config.lookup(10, ip_to_int("10.1.0.1")) == (ip_to_int("10.0.0.3"), 1 << 2)
    assert system_config.lookup(11, ip_to_int("10.0.0.100")) == (ip_to_int("10.0.0.100"), 0b1010)
    assert system_config.lookup(99, ip_to_int("10.0.0.2")) == (ip_to_int("10.0.0.2"), 0)


def test_counter_words_follow_declaration_order(system_config):
    assert counter_words(system_config) == {1: 0, 2: 1, 3: 2}


def test_system_rows_carry_tenant_vids(system_config):
    cm = build_system_module(system_config)
    assert cm.vid == 0
    read = [s for s in cm.stages if s.stage == 1]
    assert [s.slot for s in read] == [1, 2, 3]
    assert {e.vid for e in read[0].cam.values()} == {10}
    # blue: one virtual IP, two routes, one group
    assert len(read[0].cam) == 4
    assert read[0].memory == {0: ip_to_int("10.0.0.3")}


def test_too_many_routes_overflow():
    routes = {f"10.2.0.{i}": 1 for i in range(17)}
    cfg = SystemConfig(tenants=[Tenant(vid=10, slot=1)], routes=routes)
    with pytest.raises(RouteTableOverflow):
        build_system_module(cfg)


def test_routes_repeat_per_tenant():
    routes = {f"10.2.0.{i}": 1 for i in range(6)}
    tenants = [Tenant(vid=10 + i, slot=1 + i) for i in range(3)]
    with pytest.raises(RouteTableOverflow):
        build_system_module(SystemConfig(tenants=tenants, routes=routes))


# -- config loading --------------------------------------------------------------
def test_broken_toml(tmp_path):
    path = tmp_path / "system.toml"
    path.write_text("[routes\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_system_config(path)


def test_bad_port(tmp_path):
    path = tmp_path / "system.toml"
    path.write_text('[routes]\n"10.0.0.2" = 40\n', encoding="utf-8")
    with pytest.raises(ConfigError):
        load_system_config(path)


def test_duplicate_tenant_slots():
    with pytest.raises(ValueError):
        SystemConfig(tenants=[Tenant(vid=10, slot=1), Tenant(vid=11, slot=1)])


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_system_config(tmp_path / "absent.toml")

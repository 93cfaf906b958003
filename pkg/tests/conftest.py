# tests/conftest.py
from __future__ import annotations

import random
import sys
from pathlib import Path
from typing import Dict, Optional

import pytest

PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from src.control import Controller  # noqa: E402
from src.dsl import ModuleProgram  # noqa: E402
from src.frames import FrameTemplate, build_data_frame, payload_bytes  # noqa: E402
from src.pipeline import PipelineState  # noqa: E402
from src.settings import PipelineSettings  # noqa: E402
from src.system_module import load_system_config  # noqa: E402

MODULE_DIR = PROJECT_ROOT / "modules"
VIOLATION_DIR = MODULE_DIR / "violations"
SCENARIO_DIR = PROJECT_ROOT / "scenarios"
GOLDEN_DIR = PROJECT_ROOT / "golden"
SYSTEM_TOML = PROJECT_ROOT / "config" / "system.toml"

COOKIE = PipelineSettings().cookie

FIXTURES = [
    "calc",
    "firewall",
    "load_balancing",
    "qos",
    "source_routing",
    "netcache_lite",
    "netchain_lite",
    "multicast",
]

# tenant VIDs of config/system.toml -> slot
TENANTS = {10: 1, 11: 2, 12: 3}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance runs (10k-packet isolation, oracle replays)")


def read_module(name: str) -> str:
    return (MODULE_DIR / f"{name}.dsl").read_text(encoding="utf-8")


def data_frame(vid: int, fields: Optional[Dict[str, tuple]] = None, dst_ip: str = "10.0.0.2", payload_len: int = 32) -> bytes:
    """Data frame for vid with payload fields patched in: {name: (offset, width, value)}."""
    frame = build_data_frame(vid, payload_bytes(payload_len), dst_ip=dst_ip)
    if not fields:
        return frame
    tpl = FrameTemplate(frame, {n: (o, w) for n, (o, w, _) in fields.items()})
    return tpl.stamp({n: v for n, (_, _, v) in fields.items()})


def random_packet(prog: ModuleProgram, vid: int, rng: random.Random, dst_ips=("10.0.0.2",)) -> bytes:
    """Header fields drawn half from the program's entry keys, half uniformly."""
    keyed: Dict[str, set] = {}
    for t in prog.tables:
        for e in t.entries:
            for ref, v in zip(t.key, e.values):
                keyed.setdefault(ref.name, set()).add(v)
    fields = {}
    for f in prog.headers:
        if f.offset == 34 and f.width == 32:
            continue
        if f.name in keyed and rng.random() < 0.5:
            value = rng.choice(sorted(keyed[f.name]))
        elif rng.random() < 0.5:
            value = rng.randint(0, 15)
        else:
            value = rng.getrandbits(f.width)
        fields[f.name] = (f.offset, f.width, value)
    return data_frame(vid, fields, dst_ip=rng.choice(dst_ips))


@pytest.fixture
def settings() -> PipelineSettings:
    return PipelineSettings()


@pytest.fixture
def state() -> PipelineState:
    return PipelineState.fresh(cookie=COOKIE)


@pytest.fixture
def system_config():
    return load_system_config(SYSTEM_TOML)


@pytest.fixture
def controller(settings, system_config) -> Controller:
    """Controller with the system module booted for the three declared tenants."""
    ctl = Controller(settings=settings)
    ctl.boot(system_config)
    return ctl


@pytest.fixture
def bare_controller(settings) -> Controller:
    """System module with no tenants, routes or groups."""
    ctl = Controller(settings=settings)
    ctl.boot()
    return ctl


@pytest.fixture
def calc_source() -> str:
    return read_module("calc")

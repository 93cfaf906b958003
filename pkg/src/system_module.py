# src/system_module.py
"""
Built-in system module (slot 0, VID 0). It owns the first and the last
stage and is expressed purely as configuration rows; the engine has no
special case for it.

  stage 1 (read half), one row set per tenant slot:
    key   = destination IP (4B container 7, parsed from offset 34)
    VIP   -> container 7 = load(phys word) ; port(route of phys)
    route -> port(n)
    group -> ports(bitmap)

  stage 5 (write half), one row per tenant slot:
    key   = predicate "egress flag == 1"
    hit   -> 6B container 7 = loadd(counter word)   (packets forwarded)

Tenants are declared up front (config/system.toml) because CAM rows are
tagged with the tenant VID. Link utilization and queue length are copied
into metadata by the parser from the engine's statistics registers.
"""

from __future__ import annotations

import ipaddress
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.compiler import SHARED_DST_IP, SYSTEM_SCRATCH, CompiledModule, StageConfig
from src.errors import ConfigError, RouteTableOverflow
from src.formats import (
    GEOMETRY,
    IMMEDIATE_SEL,
    KEY_SLOTS,
    PREDICATE_BIT,
    SYSTEM_VID,
    AluAction,
    CamEntry,
    CmpOp,
    KeyExtractorEntry,
    KeyMaskEntry,
    KeyOperand,
    MetaStat,
    Opcode,
    PageTableEntry,
    VliwEntry,
    slot_mask,
)
from src.phv import CONTAINERS_PER_KIND, METADATA_INDEX

logger = logging.getLogger(__name__)

READ_STAGE = 1
WRITE_STAGE = GEOMETRY.num_stages
MULTICAST_PORTS = 11
DST_IP_KEY_SLOT = 2  # 4B-A


def _ip(value: Union[str, int]) -> int:
    return int(ipaddress.IPv4Address(value))


# -----------------------
# CONFIG
# -----------------------
class Tenant(BaseModel):
    name: str = ""
    vid: int = Field(ge=1, lt=0xFFF)
    slot: int = Field(ge=1, lt=GEOMETRY.max_modules)
    # virtual IP -> physical IP, local to this tenant
    vip_map: Dict[str, str] = Field(default_factory=dict)

    @field_validator("vip_map")
    @classmethod
    def _valid_ips(cls, v: Dict[str, str]) -> Dict[str, str]:
        for vip, phys in v.items():
            _ip(vip)
            _ip(phys)
        return v

    def vips(self) -> List[Tuple[int, int]]:
        """(virtual, physical) pairs in declaration order."""
        return [(_ip(k), _ip(p)) for k, p in self.vip_map.items()]


class SystemConfig(BaseModel):
    tenants: List[Tenant] = Field(default_factory=list)
    routes: Dict[str, int] = Field(default_factory=dict)
    mcast_groups: Dict[str, List[int]] = Field(default_factory=dict)
    link_util: int = Field(0, ge=0, le=0xFFFF)
    queue_len: int = Field(0, ge=0, le=0xFFFF)

    @field_validator("routes")
    @classmethod
    def _valid_routes(cls, v: Dict[str, int]) -> Dict[str, int]:
        for ip, port in v.items():
            _ip(ip)
            if not 0 <= port < 32:
                raise ValueError(f"route {ip}: port {port} does not exist")
        return v

    @field_validator("mcast_groups")
    @classmethod
    def _valid_groups(cls, v: Dict[str, List[int]]) -> Dict[str, List[int]]:
        for ip, ports in v.items():
            _ip(ip)
            if not ports:
                raise ValueError(f"group {ip} has no ports")
            if any(not 0 <= p < MULTICAST_PORTS for p in ports):
                raise ValueError(f"group {ip}: multicast ports are 0..{MULTICAST_PORTS - 1}")
        return v

    @model_validator(mode="after")
    def _distinct(self) -> "SystemConfig":
        vids = [t.vid for t in self.tenants]
        slots = [t.slot for t in self.tenants]
        if len(set(vids)) != len(vids):
            raise ValueError("tenant VIDs must be distinct")
        if len(set(slots)) != len(slots):
            raise ValueError("tenant slots must be distinct")
        both = {_ip(r) for r in self.routes} & {_ip(g) for g in self.mcast_groups}
        if both:
            raise ValueError(f"{len(both)} address(es) are both a route and a multicast group")
        return self

    # -- lookups shared with the reference interpreter -----------------------
    def route_table(self) -> Dict[int, int]:
        return {_ip(k): v for k, v in self.routes.items()}

    def group_table(self) -> Dict[int, int]:
        return {_ip(k): sum(1 << p for p in set(v)) for k, v in self.mcast_groups.items()}

    def tenant(self, vid: int) -> Optional[Tenant]:
        return next((t for t in self.tenants if t.vid == vid), None)

    def egress_for(self, ip: int) -> Tuple[str, int]:
        """("port", n) | ("ports", bitmap) | ("none", 0) for a physical address."""
        routes = self.route_table()
        if ip in routes:
            return "port", routes[ip]
        groups = self.group_table()
        if ip in groups:
            return "ports", groups[ip]
        return "none", 0

    def lookup(self, vid: int, dst_ip: int) -> Tuple[int, int]:
        """Stage-1 effect on (destination IP, port bitmap) for a tenant's packet."""
        t = self.tenant(vid)
        if t is None:
            return dst_ip, 0
        vips = dict(t.vips())
        ip = vips.get(dst_ip, dst_ip)
        kind, val = self.egress_for(ip)
        if kind == "port":
            return ip, 1 << val
        return ip, val


def load_system_config(path: Union[str, Path]) -> SystemConfig:
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"{path}: not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return SystemConfig(**data.get("system", data))
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e


# -----------------------
# STAGE 1: READ HALF
# -----------------------
def _egress_action(kind: str, value: int) -> Dict[int, AluAction]:
    if kind == "port":
        return {METADATA_INDEX: AluAction(Opcode.PORT, imm=value)}
    if kind == "ports":
        return {METADATA_INDEX: AluAction(Opcode.SET, op_a=IMMEDIATE_SEL, imm=value)}
    return {}


def _read_half(cfg: SystemConfig) -> List[StageConfig]:
    ke = KeyExtractorEntry(selectors=(0, 0, SHARED_DST_IP % CONTAINERS_PER_KIND, 0, 0, 0))
    mask = KeyMaskEntry(slot_mask(DST_IP_KEY_SLOT))
    key_lsb = KEY_SLOTS[DST_IP_KEY_SLOT][1]
    row = 0
    base = 0
    out: List[StageConfig] = []
    for t in cfg.tenants:
        rows: Dict[int, Dict[int, AluAction]] = {}
        vips = t.vips()
        for word, (vip, phys) in enumerate(vips):
            acts = {SHARED_DST_IP: AluAction(Opcode.LOAD, op_b=IMMEDIATE_SEL, imm=word)}
            acts.update(_egress_action(*cfg.egress_for(phys)))
            rows[vip] = acts
        for ip, port in cfg.route_table().items():
            rows.setdefault(ip, _egress_action("port", port))
        for ip, bitmap in cfg.group_table().items():
            rows.setdefault(ip, _egress_action("ports", bitmap))

        if row + len(rows) > GEOMETRY.cam_depth:
            raise RouteTableOverflow(
                f"stage {READ_STAGE}: {row + len(rows)} rows needed, {GEOMETRY.cam_depth} available"
            )
        if base + len(vips) > GEOMETRY.memory_words:
            raise RouteTableOverflow(f"stage {READ_STAGE}: virtual-IP words exceed memory")
        sc = StageConfig(READ_STAGE, ke, mask, PageTableEntry(base, len(vips)), slot=t.slot, tables=[f"route:{t.name or t.vid}"])
        for ip, acts in rows.items():
            sc.cam[row] = CamEntry(t.vid, ip << key_lsb)
            sc.vliw[row] = VliwEntry.of(acts)
            row += 1
        sc.memory = {base + w: phys for w, (_, phys) in enumerate(vips)}
        base += len(vips)
        out.append(sc)
    return out


# -----------------------
# STAGE 5: WRITE HALF
# -----------------------
def counter_words(cfg: SystemConfig) -> Dict[int, int]:
    """Tenant slot -> physical counter word in the last stage."""
    return {t.slot: i for i, t in enumerate(cfg.tenants)}


def _write_half(cfg: SystemConfig) -> List[StageConfig]:
    if len(cfg.tenants) > GEOMETRY.cam_depth:
        raise RouteTableOverflow(f"{len(cfg.tenants)} tenants need more than {GEOMETRY.cam_depth} counter rows")
    ke = KeyExtractorEntry(
        cmp=CmpOp.EQ,
        operand_a=KeyOperand(kind=3, value=int(MetaStat.EGRESS)),
        operand_b=KeyOperand(immediate=True, value=1),
    )
    mask = KeyMaskEntry(1 << PREDICATE_BIT)
    count = VliwEntry.of({SYSTEM_SCRATCH: AluAction(Opcode.LOADD, op_b=IMMEDIATE_SEL, imm=0)})
    out = []
    for word, t in enumerate(cfg.tenants):
        sc = StageConfig(WRITE_STAGE, ke, mask, PageTableEntry(word, 1), slot=t.slot, tables=[f"count:{t.name or t.vid}"])
        sc.cam[word] = CamEntry(t.vid, 1 << PREDICATE_BIT)
        sc.vliw[word] = count
        sc.memory = {word: 0}
        out.append(sc)
    return out


def build_system_module(cfg: SystemConfig) -> CompiledModule:
    stages = _read_half(cfg) + _write_half(cfg)
    cm = CompiledModule("system", SYSTEM_VID, stages=stages)
    logger.debug(
        "system module: %d tenants, %d stage-%d rows",
        len(cfg.tenants),
        sum(len(s.cam) for s in stages if s.stage == READ_STAGE),
        READ_STAGE,
    )
    return cm

# backend/main.py
"""
Pipeline control API
====================
HTTP face of one Controller: the runtime verbs a switch control plane
exposes (register access, module install, single-entry writes, counters)
plus packet injection and state dumps for debugging.

Endpoints:
  GET   /api/health              - liveness check
  GET   /api/registers           - cookie / reconfiguration counter / update bitmap
  POST  /api/registers/{name}    - write cookie or bitmap (counter is read-only)
  POST  /api/modules             - compile + install (or live-replace) a module
  GET   /api/modules             - installed modules by slot
  DELETE /api/modules/{slot}     - unload a module
  POST  /api/entries             - configure one table row through a session
  POST  /api/stats               - set link utilization / queue length
  GET   /api/counters            - per-module packet, byte and fault counters
  POST  /api/packets             - inject one hex frame, returns the outcome
  GET   /api/state               - full pipeline state dump
  GET   /api/rejections          - recent rejected reconfiguration writes

Run locally:
  uvicorn backend.main:app --reload --port 8000
  -> Swagger UI: http://localhost:8000/docs
"""

from __future__ import annotations

import logging
import os
import sys
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional

from fastapi import Depends, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

# -- locate project root --------------------------------------------------------
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from src.control import Controller, Register, reg_read, reg_write  # noqa: E402
from src.errors import (  # noqa: E402
    CheckFailed,
    CompileError,
    ConfigError,
    ControlError,
    FormatError,
    PipelineError,
    WriteToReadOnly,
)
from src.formats import ResourceId, ResourceType, decode_entry, entry_from_bytes  # noqa: E402
from src.settings import configure_logging, load_settings  # noqa: E402
from src.system_module import load_system_config  # noqa: E402
from src.utils import parse_hex  # noqa: E402

logger = logging.getLogger("src.backend")

SYSTEM_CONFIG = Path(os.getenv("PIPE_SYSTEM_CONFIG", "") or PROJECT_ROOT / "config" / "system.toml")


# -- controller (singleton) -----------------------------------------------------
_controller: Optional[Controller] = None


def get_controller() -> Controller:
    global _controller
    if _controller is None:
        ctl = Controller(settings=load_settings())
        try:
            ctl.boot(load_system_config(SYSTEM_CONFIG) if SYSTEM_CONFIG.exists() else None)
        except PipelineError as e:
            raise HTTPException(500, f"system module failed to boot: {e}")
        _controller = ctl
    return _controller


def _http_error(e: PipelineError) -> HTTPException:
    """Map the error families onto status codes."""
    if isinstance(e, CheckFailed):
        return HTTPException(422, {"phase": e.phase, "violations": [str(v) for v in e.violations]})
    if isinstance(e, CompileError):
        return HTTPException(422, str(e))
    if isinstance(e, (FormatError, ConfigError)):
        return HTTPException(400, str(e))
    if isinstance(e, ControlError):
        return HTTPException(409, str(e))
    return HTTPException(500, str(e))


# -- Pydantic models ------------------------------------------------------------

class RegisterWrite(BaseModel):
    value: int = Field(ge=0, lt=1 << 32)


class ModuleRequest(BaseModel):
    source:  str
    vid:     int                      = Field(ge=1, lt=0xFFF)
    slot:    Optional[int]            = Field(None, ge=1, le=31)
    quota:   Optional[Dict[str, Any]] = None
    replace: bool                     = False   # live update of an installed slot


class ModuleResponse(BaseModel):
    name:      str
    slot:      int
    vid:       int
    stage_map: Dict[str, int]
    writes:    int


class EntryRequest(BaseModel):
    slot:     int = Field(ge=0, le=31)
    stage:    int = Field(ge=0, le=7)
    resource: str                     # ResourceType name, e.g. "CAM"
    index:    int = Field(ge=0)
    entry:    str                     # hex of the encoded entry


class StatsRequest(BaseModel):
    link_util: int = Field(0, ge=0, le=0xFFFF)
    queue_len: int = Field(0, ge=0, le=0xFFFF)


class PacketRequest(BaseModel):
    hex:          str
    ingress_port: int = Field(0, ge=0, le=255)


# -- app factory ----------------------------------------------------------------

@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging()
    try:
        get_controller()
        logger.info("controller booted")
    except HTTPException as e:
        logger.error("controller boot failed: %s", e.detail)
    yield


app = FastAPI(
    title="Pipeline Control API",
    version="1.0.0",
    description="Control plane for the isolating match-action pipeline model",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)


# -- routes ---------------------------------------------------------------------

@app.api_route("/api/health", methods=["GET", "HEAD"])
def health():
    return {"status": "ok", "service": "Pipeline Control API v1"}


@app.get("/api/registers")
def get_registers(ctl: Controller = Depends(get_controller)):
    with ctl.lock:
        return {r.value: reg_read(ctl.state, r) for r in Register}


@app.post("/api/registers/{name}")
def set_register(name: str, req: RegisterWrite, ctl: Controller = Depends(get_controller)):
    try:
        reg = Register(name)
    except ValueError:
        raise HTTPException(404, f"no register {name!r}")
    with ctl.lock:
        try:
            reg_write(ctl.state, reg, req.value)
        except WriteToReadOnly as e:
            raise HTTPException(409, str(e))
        return {"success": True, name: reg_read(ctl.state, reg)}


@app.post("/api/modules", response_model=ModuleResponse)
def install_module(req: ModuleRequest, ctl: Controller = Depends(get_controller)):
    try:
        with ctl.lock:
            if req.replace:
                if req.slot is None or req.slot not in ctl.modules:
                    raise HTTPException(404, "replace needs the slot of an installed module")
                module = ctl.replace_module(req.slot, req.source, req.quota)
            else:
                module = ctl.load_module(req.source, req.vid, req.quota, req.slot)
    except PipelineError as e:
        raise _http_error(e)
    return ModuleResponse(
        name=module.name,
        slot=module.slot,
        vid=module.vid,
        stage_map=module.compiled.stage_map,
        writes=len(module.compiled.writes(module.slot)),
    )


@app.get("/api/modules")
def list_modules(ctl: Controller = Depends(get_controller)):
    with ctl.lock:
        installed = sorted(ctl.modules.items())
    return {
        "modules": [
            {"name": m.name, "slot": m.slot, "vid": m.vid, "stage_map": m.compiled.stage_map}
            for _, m in installed
        ]
    }


@app.delete("/api/modules/{slot}")
def unload_module(slot: int, ctl: Controller = Depends(get_controller)):
    try:
        with ctl.lock:
            if slot not in ctl.modules:
                raise HTTPException(404, f"slot {slot} has no module")
            ctl.unload_module(slot)
    except PipelineError as e:
        raise _http_error(e)
    return {"success": True}


@app.post("/api/entries")
def configure_entry(req: EntryRequest, ctl: Controller = Depends(get_controller)):
    try:
        rtype = ResourceType[req.resource.upper()]
    except KeyError:
        raise HTTPException(400, f"unknown resource type {req.resource!r}")
    try:
        rid = ResourceId(req.stage, rtype)
        entry = decode_entry(rtype, entry_from_bytes(rtype, parse_hex(req.entry)))
        result = ctl.configure_resource(req.slot, rid, req.index, entry)
    except PipelineError as e:
        raise _http_error(e)
    return result.to_dict()


@app.post("/api/stats")
def set_stats(req: StatsRequest, ctl: Controller = Depends(get_controller)):
    ctl.set_stats(req.link_util, req.queue_len)
    return {"success": True, "link_util": req.link_util, "queue_len": req.queue_len}


@app.get("/api/counters")
def get_counters(ctl: Controller = Depends(get_controller)):
    return ctl.read_counters()


@app.post("/api/packets")
def inject_packet(req: PacketRequest, ctl: Controller = Depends(get_controller)):
    try:
        data = parse_hex(req.hex)
    except FormatError as e:
        raise HTTPException(400, str(e))
    return ctl.inject(data, req.ingress_port).to_dict()


@app.get("/api/state")
def get_state(ctl: Controller = Depends(get_controller)):
    with ctl.lock:
        return ctl.state.to_dict()


@app.get("/api/rejections")
def get_rejections(limit: int = 50, ctl: Controller = Depends(get_controller)) -> Dict[str, List[Dict[str, Any]]]:
    with ctl.lock:
        rows = ctl.state.rejections[-limit:] if limit > 0 else []
    return {"rejections": [r.__dict__ for r in rows]}

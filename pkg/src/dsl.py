# src/dsl.py
"""
Module DSL: a small packet-program language covering exactly what the
pipeline can run (fixed-offset fields, exact-match tables with one optional
predicate, ALU actions).

    module calc;
    quota cam_entries = 4, memory_words = 0;

    field op     : 16 @ 46;          # name : width-bits @ byte offset
    field a      : 32 @ 48;
    var   tmp    : 32;               # temporary, never on the wire

    table compute {
        key = op;                    # up to 2 fields per width class
        predicate meta.queue_len < 100;
        memory 4;                    # stateful words owned by this table
        entry 1 { result = a + b; port(1); }
        entry 2 : false { drop; }    # ": false" matches when the predicate fails
    }

Actions (executed in order by the reference interpreter):
    x = y | x = 5 | x = y + z | x = y - 3
    x = load(addr) | x = loadd(addr) | store(addr, y)     addr: literal or field
    port(n) | ports(bitmap) | drop | recirculate

Reserved names: meta.vid, meta.link_util, meta.queue_len, meta.pkt_len.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError

from src.errors import ConfigError, DslSyntaxError

META_VID = "meta.vid"
META_LINK_UTIL = "meta.link_util"
META_QUEUE_LEN = "meta.queue_len"
META_PKT_LEN = "meta.pkt_len"
META_NAMES = frozenset({META_VID, META_LINK_UTIL, META_QUEUE_LEN, META_PKT_LEN})

# pseudo-name for the metadata ALU (port / ports / drop)
EGRESS = "<egress>"

CMP_OPS = ("==", "!=", ">=", "<=", ">", "<")


# -----------------------
# QUOTA
# -----------------------
class ResourceQuota(BaseModel):
    parser_actions: int = Field(10, ge=0, le=10)
    # CAM rows per used stage; VLIW rows follow CAM rows one-to-one
    cam_entries: int = Field(4, ge=0, le=16)
    memory_words: int = Field(16, ge=0, le=255)
    # per-kind PHV container caps (2B, 4B, 6B); None leaves only the hardware limit
    containers: Optional[Tuple[int, int, int]] = None


def resolve_quota(quota, prog: "ModuleProgram", settings=None) -> ResourceQuota:
    """Explicit quota > program's quota statement > settings defaults."""
    if isinstance(quota, ResourceQuota):
        return quota
    base: Dict[str, Any] = {}
    if settings is not None:
        base.update(settings.quota.model_dump())
    base.update(prog.quota)
    if quota:
        base.update(dict(quota))
    try:
        return ResourceQuota(**base)
    except ValidationError as e:
        raise ConfigError(f"invalid quota: {e}") from e


# -----------------------
# AST
# -----------------------
@dataclass(frozen=True)
class Ref:
    name: str
    line: int = 0
    column: int = 0

    @property
    def is_meta(self) -> bool:
        return self.name.startswith("meta.")


Operand = Union[Ref, int]


@dataclass(frozen=True)
class FieldDecl:
    name: str
    width: int
    offset: Optional[int] = None  # None for temporaries
    line: int = 0

    @property
    def nbytes(self) -> int:
        return self.width // 8

    @property
    def is_header(self) -> bool:
        return self.offset is not None


@dataclass(frozen=True)
class Predicate:
    left: Operand
    op: str
    right: Operand

    def refs(self) -> Tuple[Ref, ...]:
        return tuple(o for o in (self.left, self.right) if isinstance(o, Ref))


def _refs(*ops) -> FrozenSet[str]:
    return frozenset(o.name for o in ops if isinstance(o, Ref))


@dataclass(frozen=True)
class Assign:
    """target = a (set) | a + b | a - b | load(a) | loadd(a)."""

    target: Ref
    op: str
    a: Operand
    b: Optional[Operand] = None
    line: int = 0

    @property
    def uses_memory(self) -> bool:
        return self.op in ("load", "loadd")

    def reads(self) -> FrozenSet[str]:
        return _refs(self.a, self.b)

    def writes(self) -> FrozenSet[str]:
        return frozenset({self.target.name})


@dataclass(frozen=True)
class Store:
    addr: Operand
    value: Ref
    line: int = 0

    uses_memory = True

    def reads(self) -> FrozenSet[str]:
        return _refs(self.addr, self.value)

    def writes(self) -> FrozenSet[str]:
        # the issuing ALU zeroes the value's container on a fault
        return frozenset({self.value.name})


@dataclass(frozen=True)
class Port:
    port: int
    line: int = 0

    uses_memory = False

    def reads(self) -> FrozenSet[str]:
        return frozenset()

    def writes(self) -> FrozenSet[str]:
        return frozenset({EGRESS})


@dataclass(frozen=True)
class Ports:
    bitmap: int
    line: int = 0

    uses_memory = False

    def reads(self) -> FrozenSet[str]:
        return frozenset()

    def writes(self) -> FrozenSet[str]:
        return frozenset({EGRESS})


@dataclass(frozen=True)
class Drop:
    line: int = 0

    uses_memory = False

    def reads(self) -> FrozenSet[str]:
        return frozenset()

    def writes(self) -> FrozenSet[str]:
        return frozenset({EGRESS})


@dataclass(frozen=True)
class Recirculate:
    line: int = 0

    uses_memory = False

    def reads(self) -> FrozenSet[str]:
        return frozenset()

    def writes(self) -> FrozenSet[str]:
        return frozenset()


Action = Union[Assign, Store, Port, Ports, Drop, Recirculate]


@dataclass(frozen=True)
class Entry:
    values: Tuple[int, ...]
    actions: Tuple[Action, ...]
    flag: bool = True  # predicate outcome this entry matches
    line: int = 0


@dataclass(frozen=True)
class TableDecl:
    name: str
    key: Tuple[Ref, ...] = ()
    predicate: Optional[Predicate] = None
    memory: int = 0
    entries: Tuple[Entry, ...] = ()
    line: int = 0

    def match_reads(self) -> FrozenSet[str]:
        names = {r.name for r in self.key}
        if self.predicate:
            names |= {r.name for r in self.predicate.refs()}
        return frozenset(names)


@dataclass(frozen=True)
class ModuleProgram:
    name: str
    headers: Tuple[FieldDecl, ...] = ()
    temps: Tuple[FieldDecl, ...] = ()
    tables: Tuple[TableDecl, ...] = ()
    quota: Dict[str, Any] = field(default_factory=dict)

    @property
    def fields(self) -> Dict[str, FieldDecl]:
        return {f.name: f for f in self.headers + self.temps}

    def table(self, name: str) -> TableDecl:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def written_fields(self) -> Tuple[str, ...]:
        """Header fields targeted by any assignment, in declaration order."""
        written = set()
        for t in self.tables:
            for e in t.entries:
                for a in e.actions:
                    if isinstance(a, Assign):
                        written.add(a.target.name)
        return tuple(f.name for f in self.headers if f.name in written)


# -----------------------
# LEXER
# -----------------------
_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<ip>\d+\.\d+\.\d+\.\d+)
  | (?P<int>0[xX][0-9a-fA-F]+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)?)
  | (?P<op>==|!=|>=|<=|[;:@{}(),=+\-<>])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | int | op | eof
    text: str
    line: int
    column: int
    value: int = 0


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if not m:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ip":
            try:
                value = int(ipaddress.IPv4Address(s))
            except ValueError:
                raise DslSyntaxError(f"bad IPv4 address {s}", line, col) from None
            tokens.append(Token("int", s, line, col, value))
        elif kind == "int":
            tokens.append(Token("int", s, line, col, int(s, 0)))
        elif kind in ("ident", "op"):
            tokens.append(Token(kind, s, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# -----------------------
# PARSER
# -----------------------
class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # -- token helpers ------------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def _fail(self, msg: str, tok: Optional[Token] = None):
        t = tok or self.tok
        found = t.text or "end of input"
        raise DslSyntaxError(f"{msg}, found {found!r}", t.line, t.column)

    def _advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def _is(self, text: str) -> bool:
        return self.tok.kind in ("op", "ident") and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self._is(text):
            self._fail(f"expected {text!r}")
        return self._advance()

    def accept(self, text: str) -> bool:
        if self._is(text):
            self.i += 1
            return True
        return False

    def ident(self, what: str = "a name") -> Token:
        if self.tok.kind != "ident":
            self._fail(f"expected {what}")
        return self._advance()

    def integer(self, what: str = "a number") -> int:
        if self.tok.kind != "int":
            self._fail(f"expected {what}")
        return self._advance().value

    def ref(self) -> Ref:
        t = self.ident("a field")
        return Ref(t.text, t.line, t.column)

    def operand(self) -> Operand:
        if self.tok.kind == "int":
            return self._advance().value
        return self.ref()

    # -- grammar --------------------------------------------------------------
    def program(self) -> ModuleProgram:
        self.expect("module")
        name = self.ident("a module name").text
        self.expect(";")
        headers: List[FieldDecl] = []
        temps: List[FieldDecl] = []
        tables: List[TableDecl] = []
        quota: Dict[str, Any] = {}
        while self.tok.kind != "eof":
            if self._is("field"):
                headers.append(self.field_decl(header=True))
            elif self._is("var"):
                temps.append(self.field_decl(header=False))
            elif self._is("table"):
                tables.append(self.table())
            elif self._is("quota"):
                quota.update(self.quota())
            else:
                self._fail("expected 'field', 'var', 'table' or 'quota'")
        return ModuleProgram(name, tuple(headers), tuple(temps), tuple(tables), quota)

    def field_decl(self, header: bool) -> FieldDecl:
        start = self._advance()
        name = self.ident("a field name").text
        self.expect(":")
        width = self.integer("a width in bits")
        offset = None
        if header:
            self.expect("@")
            offset = self.integer("a byte offset")
        self.expect(";")
        return FieldDecl(name, width, offset, start.line)

    def quota(self) -> Dict[str, Any]:
        self._advance()
        out: Dict[str, Any] = {}
        while True:
            key = self.ident("a quota name").text
            if key not in ResourceQuota.model_fields or key == "containers":
                self._fail(f"unknown quota {key!r}", self.toks[self.i - 1])
            self.expect("=")
            out[key] = self.integer()
            if not self.accept(","):
                break
        self.expect(";")
        return out

    def table(self) -> TableDecl:
        start = self._advance()
        name = self.ident("a table name").text
        self.expect("{")
        key: Tuple[Ref, ...] = ()
        predicate = None
        memory = 0
        entries: List[Entry] = []
        while not self.accept("}"):
            if self.accept("key"):
                self.expect("=")
                refs = [self.ref()]
                while self.accept(","):
                    refs.append(self.ref())
                key = tuple(refs)
                self.expect(";")
            elif self.accept("predicate"):
                left = self.operand()
                if self.tok.text not in CMP_OPS:
                    self._fail("expected a comparison")
                op = self._advance().text
                right = self.operand()
                predicate = Predicate(left, op, right)
                self.expect(";")
            elif self.accept("memory"):
                memory = self.integer("a word count")
                self.expect(";")
            elif self._is("entry"):
                entries.append(self.entry())
            elif self.tok.kind == "eof":
                self._fail("expected '}'")
            else:
                self._fail("expected 'key', 'predicate', 'memory' or 'entry'")
        return TableDecl(name, key, predicate, memory, tuple(entries), start.line)

    def entry(self) -> Entry:
        start = self._advance()
        values: List[int] = []
        if self.tok.kind == "int":
            values.append(self.integer())
            while self.accept(","):
                values.append(self.integer("a key value"))
        flag = True
        if self.accept(":"):
            word = self.ident("'true' or 'false'")
            if word.text not in ("true", "false"):
                self._fail("expected 'true' or 'false'", word)
            flag = word.text == "true"
        self.expect("{")
        actions: List[Action] = []
        while not self.accept("}"):
            if self.tok.kind == "eof":
                self._fail("expected '}'")
            actions.append(self.action())
        return Entry(tuple(values), tuple(actions), flag, start.line)

    def _addr_call(self) -> Operand:
        self.expect("(")
        addr = self.operand()
        self.expect(")")
        return addr

    def action(self) -> Action:
        t = self.tok
        if self.accept("drop"):
            self.expect(";")
            return Drop(t.line)
        if self.accept("recirculate"):
            self.expect(";")
            return Recirculate(t.line)
        if self.accept("port"):
            self.expect("(")
            n = self.integer("a port number")
            self.expect(")")
            self.expect(";")
            return Port(n, t.line)
        if self.accept("ports"):
            self.expect("(")
            n = self.integer("a port bitmap")
            self.expect(")")
            self.expect(";")
            return Ports(n, t.line)
        if self.accept("store"):
            self.expect("(")
            addr = self.operand()
            self.expect(",")
            value = self.ref()
            self.expect(")")
            self.expect(";")
            return Store(addr, value, t.line)
        target = self.ref()
        self.expect("=")
        if self.accept("load"):
            act = Assign(target, "load", self._addr_call(), line=t.line)
        elif self.accept("loadd"):
            act = Assign(target, "loadd", self._addr_call(), line=t.line)
        else:
            left_tok = self.tok
            a = self.operand()
            if self._is("+") or self._is("-"):
                op = "add" if self._advance().text == "+" else "sub"
                if not isinstance(a, Ref):
                    self._fail("arithmetic needs a field on the left", left_tok)
                act = Assign(target, op, a, self.operand(), line=t.line)
            else:
                act = Assign(target, "set", a, line=t.line)
        self.expect(";")
        return act


def parse_dsl(text: str) -> ModuleProgram:
    """Full AST, or DslSyntaxError at the first problem."""
    return _Parser(text or "").program()


def load_program(path) -> ModuleProgram:
    with open(path, "r", encoding="utf-8") as f:
        return parse_dsl(f.read())

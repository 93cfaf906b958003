# src/utils.py
import json
import os
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from src.errors import FormatError

PathLike = Union[str, Path]


# -----------------------
# JSON FILES
# -----------------------
def _ensure_parent(path: PathLike) -> None:
    parent = os.path.dirname(str(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def _read_json(path: PathLike) -> Dict[str, Any]:
    """Reads a JSON object; missing file -> {}."""
    if not os.path.exists(path):
        return {}
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return data if isinstance(data, dict) else {}


def _write_json(path: PathLike, data: Any) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


# -----------------------
# JSON LINES (traces, per-tick stats)
# -----------------------
def to_json_line(record: Dict[str, Any]) -> str:
    # sort_keys + compact separators so identical runs produce identical bytes
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class JsonlSink:
    """
    Line-delimited JSON writer. path=None keeps records in memory only
    (tests, API), otherwise records are appended to the file as they come.

        with JsonlSink("traces/run.jsonl") as sink:
            sink.write({"seq": 0, "verdict": "FORWARDED"})
    """

    def __init__(self, path: Optional[PathLike] = None, keep: bool = False):
        self.path = path
        self.keep = keep or path is None
        self.records: List[Dict[str, Any]] = []
        self._fh = None
        if path is not None:
            _ensure_parent(path)
            self._fh = open(path, "w", encoding="utf-8")

    def write(self, record: Dict[str, Any]) -> None:
        if self.keep:
            self.records.append(record)
        if self._fh is not None:
            self._fh.write(to_json_line(record) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "JsonlSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# -----------------------
# HEX HELPERS
# -----------------------
_HEX_JUNK = re.compile(r"[\s:_-]")


def parse_hex(text: str) -> bytes:
    """Accepts 'aa bb', 'aa:bb', 'aabb' and an optional 0x prefix."""
    s = _HEX_JUNK.sub("", (text or "").strip())
    if s.lower().startswith("0x"):
        s = s[2:]
    if not s or len(s) % 2:
        raise FormatError(f"malformed hex: {len(s)} digits")
    try:
        return bytes.fromhex(s)
    except ValueError as e:
        raise FormatError(f"malformed hex: {e}") from e


def read_hex_file(path: PathLike) -> bytes:
    """Hex file with '#' comments; all digits concatenated."""
    lines = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            body = line.split("#", 1)[0].strip()
            if body:
                lines.append(body)
    return parse_hex("".join(lines))


def write_hex_lines(path: PathLike, frames: Iterable[bytes]) -> int:
    _ensure_parent(path)
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for frame in frames:
            f.write(frame.hex() + "\n")
            n += 1
    return n


def read_hex_lines(path: PathLike) -> List[bytes]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            body = line.split("#", 1)[0].strip()
            if body:
                out.append(parse_hex(body))
    return out

"""TOML reading for run.toml.

Python 3.11+ provides ``tomllib``; on 3.10 (no TOML parser on this index)
a minimal subset reader backs the same ``loads`` interface. The subset is
what run.toml uses: tables, arrays of tables, bare/dotted keys, strings,
ints, floats, booleans, and (possibly multiline) arrays, with comments.
"""

from __future__ import annotations

import re

try:  # pragma: no cover - exercised on 3.11+
    import tomllib as _tomllib
except ImportError:  # pragma: no cover
    _tomllib = None

_BARE_KEY = re.compile(r"^[A-Za-z0-9_-]+$")


class TomlError(ValueError):
    pass


def loads(text: str) -> dict:
    if _tomllib is not None:
        return _tomllib.loads(text)
    return _MiniToml(text).parse()


def load_path(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    return loads(data.decode("utf-8"))


class _MiniToml:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.root: dict = {}
        self.current = self.root

    def parse(self) -> dict:
        logical = ""
        for lineno, raw in enumerate(self.lines, 1):
            piece = _strip_comment(raw)
            logical = f"{logical} {piece}" if logical else piece
            stripped = logical.strip()
            if not stripped:
                logical = ""
                continue
            if _array_open(stripped):
                continue  # array value continues on the next line
            logical = ""
            try:
                self._handle(stripped)
            except TomlError as exc:
                raise TomlError(f"line {lineno}: {exc}") from None
        if logical.strip():
            raise TomlError("unterminated array")
        return self.root

    def _handle(self, line: str) -> None:
        if line.startswith("[["):
            if not line.endswith("]]"):
                raise TomlError(f"malformed table array header: {line!r}")
            path = self._key_path(line[2:-2].strip())
            parent = self._descend(path[:-1])
            arr = parent.setdefault(path[-1], [])
            if not isinstance(arr, list):
                raise TomlError(f"key {path[-1]!r} is not a table array")
            table: dict = {}
            arr.append(table)
            self.current = table
        elif line.startswith("["):
            if not line.endswith("]"):
                raise TomlError(f"malformed table header: {line!r}")
            path = self._key_path(line[1:-1].strip())
            self.current = self._descend(path)
        else:
            key, _, value = line.partition("=")
            if not _:
                raise TomlError(f"expected key = value, got {line!r}")
            path = self._key_path(key.strip())
            target = self.current
            for part in path[:-1]:
                target = target.setdefault(part, {})
            target[path[-1]] = _parse_value(value.strip())

    def _key_path(self, text: str) -> list[str]:
        parts = [p.strip().strip('"') for p in text.split(".")]
        for p in parts:
            if not p or (not _BARE_KEY.match(p) and '"' not in text):
                raise TomlError(f"bad key {text!r}")
        return parts

    def _descend(self, path: list[str]) -> dict:
        node = self.root
        for part in path:
            nxt = node.setdefault(part, {})
            if isinstance(nxt, list):  # array of tables: descend into last
                nxt = nxt[-1]
            node = nxt
        return node


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def _array_open(line: str) -> bool:
    depth = 0
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        elif not in_str:
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
    return depth > 0


def _split_top(text: str) -> list[str]:
    items, depth, in_str, cur = [], 0, False, []
    for ch in text:
        if ch == '"':
            in_str = not in_str
            cur.append(ch)
        elif not in_str and ch == "[":
            depth += 1
            cur.append(ch)
        elif not in_str and ch == "]":
            depth -= 1
            cur.append(ch)
        elif not in_str and ch == "," and depth == 0:
            items.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        items.append(tail)
    return items


def _parse_value(text: str):
    if not text:
        raise TomlError("empty value")
    if text.startswith('"'):
        if not text.endswith('"') or len(text) < 2:
            raise TomlError(f"unterminated string {text!r}")
        body = text[1:-1]
        return body.replace('\\"', '"').replace("\\\\", "\\").replace("\\n", "\n").replace("\\t", "\t")
    if text.startswith("["):
        if not text.endswith("]"):
            raise TomlError(f"unterminated array {text!r}")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(item) for item in _split_top(inner)]
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        if re.match(r"^[+-]?\d+$", text):
            return int(text)
        return float(text)
    except ValueError:
        raise TomlError(f"cannot parse value {text!r}") from None

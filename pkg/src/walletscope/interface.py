"""Function selectors: computing, extracting from bytecode, and resolving."""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .evm import CodeLike, iter_instructions, keccak256, locate_metadata, raw

log = logging.getLogger(__name__)

MASK_SELECTOR = 0xFFFFFFFF


class HeaderError(ValueError):
    """A function header is not in canonical form."""


@dataclass(frozen=True, order=True)
class Selector:
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != 4:
            raise ValueError(f"selector must be 4 bytes, got {len(self.value)}")

    @classmethod
    def parse(cls, text: str) -> Selector:
        text = text.strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        if not re.fullmatch(r"[0-9a-f]{8}", text):
            raise ValueError(f"not a selector: {text!r}")
        return cls(bytes.fromhex(text))

    @classmethod
    def from_int(cls, value: int) -> Selector:
        return cls(value.to_bytes(4, "big"))

    def __str__(self) -> str:
        return self.value.hex()

    @property
    def hex(self) -> str:
        return "0x" + self.value.hex()


_ALIASES = {"uint": "uint256", "int": "int256", "byte": "bytes1", "fixed": "fixed128x18",
            "ufixed": "ufixed128x18"}
_NAME = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*")
_ELEMENTARY = re.compile(
    r"(address|bool|string|bytes([1-9]|[12][0-9]|3[0-2])?|u?int(8|16|24|32|40|48|56|64|72|80|88|96|"
    r"104|112|120|128|136|144|152|160|168|176|184|192|200|208|216|224|232|240|248|256)?|"
    r"function|u?fixed(\d+x\d+)?)"
)


def _split_params(body: str) -> list[str]:
    params, depth, start = [], 0, 0
    for i, ch in enumerate(body):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise HeaderError("unbalanced parentheses")
        elif ch == "," and depth == 0:
            params.append(body[start:i])
            start = i + 1
    if depth:
        raise HeaderError("unbalanced parentheses")
    params.append(body[start:])
    return [] if params == [""] else params


def _canonical_type(text: str) -> str:
    arrays = ""
    while text.endswith("]"):
        open_at = text.rfind("[")
        if open_at < 0 or not re.fullmatch(r"\d*", text[open_at + 1 : -1]):
            raise HeaderError(f"bad array suffix in {text!r}")
        arrays = text[open_at:] + arrays
        text = text[:open_at]
    if text.startswith("(") and text.endswith(")"):
        base = "(" + ",".join(_canonical_type(p) for p in _split_params(text[1:-1])) + ")"
    else:
        base = _ALIASES.get(text, text)
        if not _ELEMENTARY.fullmatch(base):
            raise HeaderError(f"unknown type {text!r}")
    return base + arrays


def canonicalize(header: str) -> str:
    """Canonical form of a function header, e.g. ``f(uint)`` -> ``f(uint256)``.

    Whitespace is rejected rather than removed: a header with spaces is not
    what gets hashed on chain.
    """
    if any(ch.isspace() for ch in header):
        raise HeaderError(f"whitespace in header {header!r}")
    open_at = header.find("(")
    if open_at <= 0 or not header.endswith(")"):
        raise HeaderError(f"malformed header {header!r}")
    name = header[:open_at]
    if not _NAME.fullmatch(name):
        raise HeaderError(f"bad function name {name!r}")
    params = _split_params(header[open_at + 1 : -1])
    if any(not p for p in params):
        raise HeaderError(f"empty parameter in {header!r}")
    return name + "(" + ",".join(_canonical_type(p) for p in params) + ")"


def selector_of(header: str) -> Selector:
    return Selector(keccak256(canonicalize(header).encode())[:4])


@dataclass(frozen=True)
class InterfaceSet:
    selectors: frozenset[Selector] = frozenset()

    @classmethod
    def of(cls, items: Iterable[Selector | str]) -> InterfaceSet:
        out = set()
        for item in items:
            if isinstance(item, Selector):
                out.add(item)
            elif "(" in item:
                out.add(selector_of(item))
            else:
                out.add(Selector.parse(item))
        return cls(frozenset(out))

    @classmethod
    def parse(cls, text: str) -> InterfaceSet:
        """Inverse of :meth:`serialize`; ``-`` is the empty interface."""
        text = text.strip()
        if text in ("", "-"):
            return cls()
        return cls.of(text.split(","))

    def serialize(self) -> str:
        return ",".join(str(s) for s in sorted(self.selectors)) or "-"

    def __contains__(self, item: object) -> bool:
        return item in self.selectors

    def __iter__(self):
        return iter(sorted(self.selectors))

    def __len__(self) -> int:
        return len(self.selectors)


# Instructions that only shuffle the stack; skipped when looking for the
# comparison that consumes a pushed selector.
_STACK_ONLY = {0x50, 0x5B} | set(range(0x80, 0xA0))
EQ, SUB, ISZERO, JUMPI, DIV, CALLDATALOAD = 0x14, 0x03, 0x15, 0x57, 0x04, 0x35
PUSH4, PUSH29, PUSH32 = 0x63, 0x7C, 0x7F
JUMPI_WINDOW = 8


def _is_power_of_256(value: int) -> bool:
    return value > 1 and value & (value - 1) == 0 and (value.bit_length() - 1) % 8 == 0


def dispatch_anchor(code: CodeLike) -> int | None:
    """Index of the instruction that loads the call data to dispatch on.

    Legacy compilers divide the first word by 256**28 instead of shifting;
    the divisor push is accepted as the anchor as long as a CALLDATALOAD
    feeds the same DIV.
    """
    instructions = list(iter_instructions(code))
    for i, ins in enumerate(instructions):
        if ins.opcode == CALLDATALOAD:
            return i
        if ins.opcode in (PUSH29, PUSH32) and ins.value and _is_power_of_256(ins.value):
            window = instructions[i + 1 : i + 6]
            ops = [w.opcode for w in window]
            if CALLDATALOAD in ops and DIV in ops:
                return i
    return None


def _comparison_end(instructions, i: int) -> int | None:
    """Index of the EQ (or ISZERO of SUB) consuming the push at ``i``."""
    significant = []
    j = i + 1
    while j < len(instructions) and len(significant) < 2:
        if instructions[j].opcode not in _STACK_ONLY:
            significant.append(j)
        j += 1
    ops = [instructions[k].opcode for k in significant]
    if ops and ops[0] == EQ:
        return significant[0]
    if len(ops) == 2 and ops[1] == EQ:
        return significant[1]
    if ops == [SUB, ISZERO]:
        return significant[1]
    return None


def extract_interface(code: CodeLike) -> InterfaceSet:
    """Selectors compared against the call data in the dispatcher."""
    data = raw(code)
    trailer = locate_metadata(data)
    if trailer is not None:
        data = data[: trailer.start_offset]
    instructions = list(iter_instructions(data))
    anchor = dispatch_anchor(data)
    if anchor is None:
        return InterfaceSet()

    found = set()
    for i in range(anchor + 1, len(instructions)):
        ins = instructions[i]
        if ins.opcode != PUSH4 or ins.truncated or ins.value == MASK_SELECTOR:
            continue
        end = _comparison_end(instructions, i)
        if end is None:
            continue
        window = instructions[end + 1 : end + 1 + JUMPI_WINDOW]
        if any(w.opcode == JUMPI for w in window):
            found.add(Selector(ins.push_arg))
    return InterfaceSet(frozenset(found))


@dataclass
class LoadReport:
    loaded: int = 0
    duplicates: int = 0
    rejected: int = 0
    rejected_lines: list[int] = field(default_factory=list)


class SignatureDirectory:
    """Selector -> candidate headers, in insertion order."""

    def __init__(self, entries: Mapping[Selector, list[str]] | None = None) -> None:
        self._entries: dict[Selector, list[str]] = {}
        for sel, headers in (entries or {}).items():
            for header in headers:
                self.add(header, sel)

    def add(self, header: str, expected: Selector | None = None) -> bool:
        """Add a header; False if it was already present.

        Raises :class:`HeaderError` for malformed headers and ``ValueError``
        when ``expected`` is not the header's selector.
        """
        header = canonicalize(header)
        sel = selector_of(header)
        if expected is not None and expected != sel:
            raise ValueError(f"{header} hashes to {sel}, not {expected}")
        bucket = self._entries.setdefault(sel, [])
        if header in bucket:
            return False
        bucket.append(header)
        return True

    def get(self, sel: Selector) -> list[str]:
        return list(self._entries.get(sel, ()))

    def __contains__(self, sel: object) -> bool:
        return sel in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def collisions(self) -> dict[Selector, list[str]]:
        return {s: list(h) for s, h in self._entries.items() if len(h) > 1}


def load_directory(path: str | Path) -> tuple[SignatureDirectory, LoadReport]:
    directory = SignatureDirectory()
    report = LoadReport()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            sel_text, sep, header = line.partition(" ")
            try:
                if not sep:
                    raise ValueError("missing separator")
                added = directory.add(header, Selector.parse(sel_text))
            except ValueError:
                report.rejected += 1
                report.rejected_lines.append(lineno)
                continue
            if added:
                report.loaded += 1
            else:
                report.duplicates += 1
    if report.rejected:
        log.warning("%s: rejected %d malformed line(s)", path, report.rejected)
    return directory, report


UNRESOLVED = None


@dataclass(frozen=True)
class Restoration:
    headers: dict[Selector, list[str] | None]

    @property
    def resolved(self) -> int:
        return sum(1 for h in self.headers.values() if h is not UNRESOLVED)

    @property
    def ratio(self) -> float:
        # An empty interface counts as fully resolved.
        return self.resolved / len(self.headers) if self.headers else 1.0


def restore_headers(iface: InterfaceSet, directory: SignatureDirectory) -> Restoration:
    return Restoration(
        {sel: (directory.get(sel) if sel in directory else UNRESOLVED) for sel in iface}
    )

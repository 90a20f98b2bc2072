"""EVM bytecode decoding, compiler fingerprinting and metadata location."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union

from Crypto.Hash import keccak


def keccak256(data: bytes) -> bytes:
    return keccak.new(digest_bits=256, data=data).digest()


def to_hex(data: bytes) -> str:
    return "0x" + data.hex()


def from_hex(text: str) -> bytes:
    text = text.strip()
    if text[:2] in ("0x", "0X"):
        text = text[2:]
    return bytes.fromhex(text)


class Source(str, enum.Enum):
    DEPLOYED = "deployed"
    CREATION = "creation"


@dataclass(frozen=True)
class Bytecode:
    data: bytes = b""
    source: Source = Source.DEPLOYED

    @classmethod
    def from_hex(cls, text: str, source: Source = Source.DEPLOYED) -> Bytecode:
        return cls(from_hex(text), Source(source))

    @property
    def hex(self) -> str:
        return to_hex(self.data)

    def __len__(self) -> int:
        return len(self.data)


CodeLike = Union[Bytecode, bytes, bytearray]


def raw(code: CodeLike) -> bytes:
    return code.data if isinstance(code, Bytecode) else bytes(code)


# Instruction set up to and including Istanbul.
OPCODES: dict[int, str] = {
    0x00: "STOP", 0x01: "ADD", 0x02: "MUL", 0x03: "SUB", 0x04: "DIV", 0x05: "SDIV",
    0x06: "MOD", 0x07: "SMOD", 0x08: "ADDMOD", 0x09: "MULMOD", 0x0A: "EXP",
    0x0B: "SIGNEXTEND",
    0x10: "LT", 0x11: "GT", 0x12: "SLT", 0x13: "SGT", 0x14: "EQ", 0x15: "ISZERO",
    0x16: "AND", 0x17: "OR", 0x18: "XOR", 0x19: "NOT", 0x1A: "BYTE", 0x1B: "SHL",
    0x1C: "SHR", 0x1D: "SAR",
    0x20: "SHA3",
    0x30: "ADDRESS", 0x31: "BALANCE", 0x32: "ORIGIN", 0x33: "CALLER",
    0x34: "CALLVALUE", 0x35: "CALLDATALOAD", 0x36: "CALLDATASIZE",
    0x37: "CALLDATACOPY", 0x38: "CODESIZE", 0x39: "CODECOPY", 0x3A: "GASPRICE",
    0x3B: "EXTCODESIZE", 0x3C: "EXTCODECOPY", 0x3D: "RETURNDATASIZE",
    0x3E: "RETURNDATACOPY", 0x3F: "EXTCODEHASH",
    0x40: "BLOCKHASH", 0x41: "COINBASE", 0x42: "TIMESTAMP", 0x43: "NUMBER",
    0x44: "DIFFICULTY", 0x45: "GASLIMIT", 0x46: "CHAINID", 0x47: "SELFBALANCE",
    0x50: "POP", 0x51: "MLOAD", 0x52: "MSTORE", 0x53: "MSTORE8", 0x54: "SLOAD",
    0x55: "SSTORE", 0x56: "JUMP", 0x57: "JUMPI", 0x58: "PC", 0x59: "MSIZE",
    0x5A: "GAS", 0x5B: "JUMPDEST",
    0xF0: "CREATE", 0xF1: "CALL", 0xF2: "CALLCODE", 0xF3: "RETURN",
    0xF4: "DELEGATECALL", 0xF5: "CREATE2", 0xFA: "STATICCALL", 0xFD: "REVERT",
    0xFE: "INVALID", 0xFF: "SELFDESTRUCT",
}
for _n in range(1, 33):
    OPCODES[0x5F + _n] = f"PUSH{_n}"
for _n in range(1, 17):
    OPCODES[0x7F + _n] = f"DUP{_n}"
    OPCODES[0x8F + _n] = f"SWAP{_n}"
for _n in range(5):
    OPCODES[0xA0 + _n] = f"LOG{_n}"
NAME_TO_OPCODE = {name: value for value, name in OPCODES.items()}

PUSH1, PUSH32 = 0x60, 0x7F


def push_size(opcode: int) -> int:
    return opcode - PUSH1 + 1 if PUSH1 <= opcode <= PUSH32 else 0


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: int
    push_arg: bytes | None = None
    truncated: bool = False

    @property
    def name(self) -> str:
        # Unassigned values share the designated INVALID mnemonic.
        return OPCODES.get(self.opcode, "INVALID")

    @property
    def known(self) -> bool:
        return self.opcode in OPCODES

    @property
    def size(self) -> int:
        """Encoded length in the input, which is short for a truncated push."""
        return 1 + (len(self.push_arg) if self.push_arg is not None else 0)

    @property
    def value(self) -> int | None:
        if self.push_arg is None:
            return None
        return int.from_bytes(self.push_arg, "big")

    def encode(self) -> bytes:
        return bytes([self.opcode]) + (self.push_arg or b"")

    def __str__(self) -> str:
        text = f"{self.offset:04x}  {self.name}"
        if self.push_arg is not None:
            text += " 0x" + self.push_arg.hex()
            if self.truncated:
                text += " (truncated)"
        return text


def iter_instructions(code: CodeLike) -> Iterator[Instruction]:
    data = raw(code)
    i, n = 0, len(data)
    while i < n:
        op = data[i]
        width = push_size(op)
        if width:
            arg = data[i + 1 : i + 1 + width]
            yield Instruction(i, op, arg, len(arg) < width)
            i += 1 + width
        else:
            yield Instruction(i, op)
            i += 1


def disassemble(code: CodeLike) -> list[Instruction]:
    """Decode every byte of ``code``; never fails.

    A push whose argument runs past the end of the code keeps only the bytes
    that exist and is flagged ``truncated``, so that joining the encodings
    gives back the input exactly.
    """
    return list(iter_instructions(code))


def assemble(instructions: list[Instruction]) -> bytes:
    return b"".join(ins.encode() for ins in instructions)


class SolcKind(str, enum.Enum):
    PLAIN = "plain_solc"
    LIBRARY = "library_solc"
    OTHER = "other"


SOLC_PREFIXES = tuple(
    bytes.fromhex(p)
    for p in ("6060604052", "6080604052", "60806040818152", "60806040819052", "60806040908152")
)


def detect_solc(code: CodeLike) -> SolcKind:
    data = raw(code)
    if data.startswith(SOLC_PREFIXES):
        return SolcKind.PLAIN
    # Libraries start with PUSHn <own address> followed by POP or ADDRESS EQ.
    width = push_size(data[0]) if data else 0
    if width:
        rest = data[1 + width :]
        for guard in (b"\x50", b"\x30\x14"):
            if rest.startswith(guard) and rest[len(guard) :].startswith(SOLC_PREFIXES):
                return SolcKind.LIBRARY
    return SolcKind.OTHER


# CBOR map header (1 to 5 entries) followed by the first key.
_METADATA_KEYS = (
    b"\x65bzzr0",
    b"\x65bzzr1",
    b"\x64ipfs",
)
_MAP_HEADERS = range(0xA1, 0xA6)


@dataclass(frozen=True)
class MetadataTrailer:
    start_offset: int
    length: int

    @property
    def end_offset(self) -> int:
        return self.start_offset + self.length


def _is_metadata_payload(payload: bytes) -> bool:
    return (
        len(payload) > 1
        and payload[0] in _MAP_HEADERS
        and payload[1:].startswith(_METADATA_KEYS)
    )


def locate_metadata(code: CodeLike) -> MetadataTrailer | None:
    """Find the solc metadata blob terminating deployed code, if any."""
    data = raw(code)
    if len(data) < 2:
        return None
    length = int.from_bytes(data[-2:], "big")
    if length + 2 > len(data):
        return None
    start = len(data) - 2 - length
    if not _is_metadata_payload(data[start : start + length]):
        return None
    return MetadataTrailer(start, length + 2)


def embedded_trailers(code: CodeLike) -> list[MetadataTrailer]:
    """All well-formed metadata blobs anywhere in ``code``.

    Creation code carries the runtime's trailer in the middle (followed by
    constructor arguments), and factories embed their children's code, so the
    suffix test of :func:`locate_metadata` is not enough there.
    """
    data = raw(code)
    found = []
    for header in _MAP_HEADERS:
        for key in _METADATA_KEYS:
            marker = bytes([header]) + key
            start = data.find(marker)
            while start != -1:
                # Payload length is unknown up front; try the length suffix at
                # every position the known trailer shapes can produce.
                for length in range(len(marker) + 32, min(len(data) - start - 2, 0x100) + 1):
                    end = start + length
                    if int.from_bytes(data[end : end + 2], "big") == length:
                        found.append(MetadataTrailer(start, length + 2))
                        break
                start = data.find(marker, start + 1)
    return sorted(set(found), key=lambda t: t.start_offset)


def read_hex_lines(path: str | Path) -> list[str]:
    """Hex strings from a bytecode file, skipping blanks and comments."""
    lines = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                lines.append(line)
    return lines


def normalize_address(text: str) -> str:
    """Lowercase, 0x-prefixed 20-byte address; raises ValueError otherwise."""
    text = text.strip().lower()
    if not text.startswith("0x"):
        text = "0x" + text
    if len(text) != 42 or any(c not in "0123456789abcdef" for c in text[2:]):
        raise ValueError(f"not an address: {text!r}")
    return text

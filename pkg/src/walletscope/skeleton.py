"""Code skeletons: bytecode with the functionally irrelevant parts zeroed."""

from __future__ import annotations

from dataclasses import dataclass, field

from .evm import (
    Bytecode,
    CodeLike,
    Source,
    embedded_trailers,
    iter_instructions,
    keccak256,
    locate_metadata,
    raw,
    to_hex,
)


@dataclass(frozen=True)
class Skeleton:
    data: bytes
    hash: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.data.endswith(b"\x00"):
            raise ValueError("skeleton bytes must not end in 0x00")
        object.__setattr__(self, "hash", keccak256(self.data))

    @property
    def hex(self) -> str:
        return to_hex(self.data)

    @property
    def hash_hex(self) -> str:
        return to_hex(self.hash)

    def __len__(self) -> int:
        return len(self.data)


def _creation_code_end(data: bytes) -> int:
    trailers = embedded_trailers(data)
    return trailers[-1].end_offset if trailers else len(data)


def skeletonize(code: CodeLike, source: Source | None = None) -> Skeleton:
    """Zero push arguments, metadata and constructor arguments, then strip
    trailing zero bytes.

    ``source`` overrides the tag carried by a :class:`Bytecode`; plain bytes
    count as deployed code.
    """
    data = raw(code)
    if source is None:
        source = code.source if isinstance(code, Bytecode) else Source.DEPLOYED
    out = bytearray(data)

    for ins in iter_instructions(data):
        if ins.push_arg:
            out[ins.offset + 1 : ins.offset + ins.size] = bytes(len(ins.push_arg))

    if source is Source.CREATION:
        end = _creation_code_end(data)
        out[end:] = bytes(len(out) - end)
        for trailer in embedded_trailers(data):
            out[trailer.start_offset : trailer.end_offset] = bytes(trailer.length)
    else:
        trailer = locate_metadata(data)
        if trailer is not None:
            out[trailer.start_offset :] = bytes(trailer.length)

    return Skeleton(bytes(out).rstrip(b"\x00"))


def skeleton_hash(skeleton: Skeleton) -> bytes:
    return keccak256(skeleton.data)

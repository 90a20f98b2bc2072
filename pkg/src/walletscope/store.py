"""Content-addressed record log for codes, addresses and classifications.

The log is line oriented text.  The first line is the version header; every
other line is one tab-separated record::

    code   <bytecode hash> <skeleton hash> <solc kind> <interface> <bytecode>
    addr   <address> <bytecode hash> <creator|-> <creation block|->
    class  <address> <blueprint|-> <wallet type|->
    usage  <address> <bucket>

Later ``class``/``usage`` records for an address supersede earlier ones; a
``-`` blueprint clears the classification.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Iterator
from dataclasses import dataclass, replace
from pathlib import Path

from .blueprint import Classification, WalletType
from .evm import SolcKind, detect_solc, from_hex, keccak256, normalize_address, to_hex
from .interface import InterfaceSet, extract_interface
from .skeleton import skeletonize
from .trace import UsageBucket, VarietyCounts, count_variety

HEADER = "#walletscope-store\tv1"


class StoreError(Exception):
    pass


class StoreCorruption(StoreError):
    """The log contradicts itself: bad header, bad line, or a hash mismatch."""


class NotFound(StoreError, KeyError):
    pass


@dataclass(frozen=True)
class CodeRecord:
    bytecode_hash: bytes
    data: bytes
    skeleton_hash: bytes
    interface: InterfaceSet
    solc: SolcKind

    @classmethod
    def of(cls, data: bytes) -> CodeRecord:
        return cls(keccak256(data), data, skeletonize(data).hash, extract_interface(data), detect_solc(data))

    def to_line(self) -> str:
        return "\t".join(
            ("code", to_hex(self.bytecode_hash), to_hex(self.skeleton_hash), self.solc.value,
             self.interface.serialize(), to_hex(self.data))
        )


@dataclass(frozen=True)
class AddressRecord:
    address: str
    bytecode_hash: bytes
    creator: str | None = None
    block: int | None = None
    classification: Classification | None = None
    usage: UsageBucket | None = None

    def to_line(self) -> str:
        return "\t".join(
            ("addr", self.address, to_hex(self.bytecode_hash), self.creator or "-",
             "-" if self.block is None else str(self.block))
        )


class Store:
    """Single-writer store; readers see whatever has been written so far."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._codes: dict[bytes, CodeRecord] = {}
        self._addresses: dict[str, AddressRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists() and self.path.stat().st_size:
            self._load()
        elif self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(HEADER + "\n", encoding="utf-8")

    # -- log replay -------------------------------------------------------

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            first = fh.readline().rstrip("\n")
            if first != HEADER:
                raise StoreCorruption(f"{self.path}: missing or unknown version header {first!r}")
            for lineno, line in enumerate(fh, 2):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    self._apply(line.split("\t"))
                except StoreCorruption as exc:
                    raise StoreCorruption(f"{self.path}:{lineno}: {exc}") from None
                except (ValueError, KeyError, IndexError) as exc:
                    raise StoreCorruption(f"{self.path}:{lineno}: malformed record ({exc})") from None

    def _apply(self, f: list[str]) -> None:
        kind = f[0]
        if kind == "code":
            data = from_hex(f[5])
            key = from_hex(f[1])
            if keccak256(data) != key:
                raise StoreCorruption(f"bytecode hash mismatch for {f[1]}")
            self._codes[key] = CodeRecord(
                key, data, from_hex(f[2]), InterfaceSet.parse(f[4]), SolcKind(f[3])
            )
        elif kind == "addr":
            key = from_hex(f[2])
            if key not in self._codes:
                raise StoreCorruption(f"address {f[1]} refers to unknown code {f[2]}")
            old = self._addresses.get(f[1])
            self._addresses[f[1]] = AddressRecord(
                f[1], key, None if f[3] == "-" else f[3], None if f[4] == "-" else int(f[4]),
                old.classification if old else None, old.usage if old else None,
            )
        elif kind == "class":
            rec = self._addresses[f[1]]
            cls = None if f[2] == "-" else Classification(f[2], WalletType(f[3]), False)
            self._addresses[f[1]] = replace(rec, classification=cls)
        elif kind == "usage":
            rec = self._addresses[f[1]]
            self._addresses[f[1]] = replace(rec, usage=UsageBucket(f[2]))
        else:
            raise ValueError(f"unknown record kind {kind!r}")

    def _append(self, fields: list[str]) -> None:
        self._apply(fields)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write("\t".join(fields) + "\n")

    # -- codes ------------------------------------------------------------

    def put_code(self, data: bytes) -> CodeRecord:
        key = keccak256(data)
        with self._lock:
            if key not in self._codes:
                self._append(CodeRecord.of(data).to_line().split("\t"))
            return self._codes[key]

    def get_code(self, bytecode_hash: bytes) -> CodeRecord:
        rec = self._codes.get(bytecode_hash)
        if rec is None:
            raise NotFound(to_hex(bytecode_hash))
        if keccak256(rec.data) != rec.bytecode_hash:
            raise StoreCorruption(f"bytecode hash mismatch for {to_hex(bytecode_hash)}")
        return rec

    def codes(self) -> Iterator[CodeRecord]:
        return iter(sorted(self._codes.values(), key=lambda r: r.bytecode_hash))

    def verify(self) -> None:
        """Recompute every cached field from the stored bytes."""
        for rec in self._codes.values():
            if CodeRecord.of(rec.data) != rec:
                raise StoreCorruption(f"stale cache for {to_hex(rec.bytecode_hash)}")

    # -- addresses ----------------------------------------------------------

    def put_address(
        self, address: str, data: bytes, creator: str | None = None, block: int | None = None
    ) -> AddressRecord:
        address = normalize_address(address)
        creator = normalize_address(creator) if creator else None
        code = self.put_code(data)
        with self._lock:
            rec = self._addresses.get(address)
            new = AddressRecord(address, code.bytecode_hash, creator, block)
            if rec is None or (rec.bytecode_hash, rec.creator, rec.block) != (
                new.bytecode_hash, new.creator, new.block
            ):
                self._append(new.to_line().split("\t"))
            return self._addresses[address]

    def get_address(self, address: str) -> AddressRecord:
        rec = self._addresses.get(normalize_address(address))
        if rec is None:
            raise NotFound(address)
        return rec

    def addresses(self) -> Iterator[AddressRecord]:
        return iter(sorted(self._addresses.values(), key=lambda r: r.address))

    def __len__(self) -> int:
        return len(self._addresses)

    def set_classification(self, address: str, cls: Classification | None) -> None:
        rec = self.get_address(address)
        current = rec.classification
        if (current and (current.blueprint, current.wallet_type)) == (cls and (cls.blueprint, cls.wallet_type)):
            return
        with self._lock:
            if cls is None:
                self._append(["class", rec.address, "-", "-"])
            else:
                self._append(["class", rec.address, cls.blueprint, cls.wallet_type.value])

    def set_usage(self, address: str, bucket: UsageBucket) -> None:
        rec = self.get_address(address)
        if rec.usage is bucket:
            return
        with self._lock:
            self._append(["usage", rec.address, bucket.value])

    # -- statistics ---------------------------------------------------------

    def dedup_stats(
        self, where: WalletType | str | Callable[[AddressRecord], bool] | None = None
    ) -> VarietyCounts:
        """Deployments and distinct bytecodes, skeletons and creators.

        ``where`` selects addresses: a wallet type, a blueprint name, a
        predicate, or None for everything in the store.
        """
        if where is None:
            keep = lambda rec: True  # noqa: E731
        elif isinstance(where, WalletType):
            keep = lambda rec: rec.classification is not None and rec.classification.wallet_type is where  # noqa: E731
        elif isinstance(where, str):
            keep = lambda rec: rec.classification is not None and rec.classification.blueprint == where  # noqa: E731
        else:
            keep = where
        return count_variety(
            (rec.bytecode_hash, self._codes[rec.bytecode_hash].skeleton_hash, rec.creator)
            for rec in self._addresses.values()
            if keep(rec)
        )

"""Message traces: contract registry, factories, trace patterns and usage."""

from __future__ import annotations

import enum
import logging
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .blueprint import Blueprint, Classification, TraceContext, TracePatternKind, WalletType
from .evm import CodeLike, keccak256, normalize_address, raw
from .interface import InterfaceSet, Selector, extract_interface, selector_of
from .skeleton import skeletonize

log = logging.getLogger(__name__)


class MessageKind(str, enum.Enum):
    CREATE = "create"
    CREATE2 = "create2"
    CALL = "call"
    DELEGATECALL = "delegatecall"
    STATICCALL = "staticcall"
    SELFDESTRUCT = "selfdestruct"

    @property
    def creates(self) -> bool:
        return self in (MessageKind.CREATE, MessageKind.CREATE2)


CALL_KINDS = frozenset({MessageKind.CALL, MessageKind.DELEGATECALL, MessageKind.STATICCALL})


class TraceFormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None) -> None:
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


def _opt_address(text: str) -> str | None:
    return None if text in ("", "-") else normalize_address(text)


@dataclass(frozen=True, order=True)
class Message:
    block: int
    tx_id: str
    intra_tx_index: int
    kind: MessageKind
    sender: str
    to: str | None
    value: int = 0
    selector: Selector | None = None
    success: bool = True

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError("negative value")
        if self.intra_tx_index < 0:
            raise ValueError("negative intra-transaction index")
        if self.kind.creates and self.success and self.to is None:
            raise ValueError("successful create without resulting address")

    @property
    def key(self) -> tuple[str, int]:
        return (self.tx_id, self.intra_tx_index)

    def to_line(self) -> str:
        return "\t".join(
            (
                str(self.block),
                self.tx_id,
                str(self.intra_tx_index),
                self.kind.value,
                self.sender,
                self.to or "-",
                str(self.value),
                str(self.selector) if self.selector else "-",
                "1" if self.success else "0",
            )
        )

    @classmethod
    def from_line(cls, line: str) -> Message:
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 9:
            raise ValueError(f"expected 9 tab-separated fields, got {len(fields)}")
        block, tx_id, index, kind, sender, to, value, sel, success = fields
        if success not in ("0", "1"):
            raise ValueError(f"success flag must be 0 or 1, not {success!r}")
        return cls(
            block=int(block),
            tx_id=tx_id.lower(),
            intra_tx_index=int(index),
            kind=MessageKind(kind),
            sender=normalize_address(sender),
            to=_opt_address(to),
            value=int(value),
            selector=None if sel == "-" else Selector.parse(sel),
            success=success == "1",
        )


@dataclass(frozen=True)
class TokenEvent:
    """A Transfer(address,address,uint256) log entry."""

    block: int
    tx_id: str
    emitter: str
    sender: str
    recipient: str
    amount: int

    def to_line(self) -> str:
        return "\t".join(
            (str(self.block), self.tx_id, self.emitter, self.sender, self.recipient, str(self.amount))
        )

    @classmethod
    def from_line(cls, line: str) -> TokenEvent:
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 6:
            raise ValueError(f"expected 6 tab-separated fields, got {len(fields)}")
        block, tx_id, emitter, sender, recipient, amount = fields
        return cls(
            int(block), tx_id.lower(), normalize_address(emitter),
            normalize_address(sender), normalize_address(recipient), int(amount),
        )


TRANSFER_EVENT = "Transfer(address,address,uint256)"
TRANSFER_TOPIC = keccak256(TRANSFER_EVENT.encode())

HOLDER_FUNCTIONS = {
    "transfer(address,uint256)": 1,
    "transferFrom(address,address,uint256)": 2,
    "mint(address,uint256)": 1,
    "balanceOf(address)": 1,
}
HOLDER_SELECTORS = {selector_of(h): n for h, n in HOLDER_FUNCTIONS.items()}


@dataclass(frozen=True)
class TokenCall:
    """A call to one of the holder-revealing token functions.

    ``holders`` are the address arguments of the call, not its sender.
    """

    block: int
    tx_id: str
    token: str
    selector: Selector
    holders: tuple[str, ...]

    def to_line(self) -> str:
        return "\t".join(
            (str(self.block), self.tx_id, self.token, str(self.selector), ",".join(self.holders))
        )

    @classmethod
    def from_line(cls, line: str) -> TokenCall:
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 5:
            raise ValueError(f"expected 5 tab-separated fields, got {len(fields)}")
        block, tx_id, token, sel, holders = fields
        return cls(
            int(block), tx_id.lower(), normalize_address(token), Selector.parse(sel),
            tuple(normalize_address(h) for h in holders.split(",") if h),
        )


def holders_from_calldata(data: bytes) -> tuple[Selector, tuple[str, ...]] | None:
    """Decode the address arguments of a holder-revealing token call."""
    if len(data) < 4:
        return None
    sel = Selector(data[:4])
    count = HOLDER_SELECTORS.get(sel)
    if count is None or len(data) < 4 + 32 * count:
        return None
    words = [data[4 + 32 * i : 36 + 32 * i] for i in range(count)]
    return sel, tuple("0x" + w[12:].hex() for w in words)


def _read_records(path: str | Path, parse) -> tuple[list, list[str]]:
    records, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                records.append(parse(line))
            except ValueError as exc:
                errors.append(f"{path}:{lineno}: {exc}")
    for err in errors:
        log.warning("rejected %s", err)
    return records, errors


def read_traces(path: str | Path) -> tuple[list[Message], list[str]]:
    return _read_records(path, Message.from_line)


def read_token_events(path: str | Path) -> tuple[list[TokenEvent], list[str]]:
    return _read_records(path, TokenEvent.from_line)


def read_token_calls(path: str | Path) -> tuple[list[TokenCall], list[str]]:
    return _read_records(path, TokenCall.from_line)


@dataclass(frozen=True)
class CodeInfo:
    bytecode_hash: bytes
    skeleton_hash: bytes
    interface: InterfaceSet

    @classmethod
    def of(cls, code: CodeLike) -> CodeInfo:
        data = raw(code)
        return cls(keccak256(data), skeletonize(data).hash, extract_interface(data))


@dataclass(frozen=True)
class ContractRecord:
    address: str
    creator: str
    creator_is_contract: bool
    block: int
    tx_id: str
    bytecode_hash: bytes | None = None
    skeleton_hash: bytes | None = None


class Registry:
    """Messages keyed by (tx_id, intra_tx_index) plus the contracts they create.

    Everything derived is a function of the set of ingested messages and
    attached code; ingestion order and repetition do not matter.
    """

    def __init__(self) -> None:
        self._messages: dict[tuple[str, int], Message] = {}
        self._code: dict[str, CodeInfo] = {}
        self._index: dict | None = None

    # -- writing --------------------------------------------------------

    def ingest(self, messages: Iterable[Message]) -> int:
        """Add messages; returns how many were new."""
        added = 0
        for msg in messages:
            old = self._messages.get(msg.key)
            if old is None:
                self._messages[msg.key] = msg
                added += 1
            elif old != msg:
                # Conflicting duplicates: keep a deterministic winner.
                log.warning("conflicting records for %s/%d", *msg.key)
                self._messages[msg.key] = min(old, msg, key=Message.to_line)
        self._index = None
        return added

    def attach_code(self, address: str, code: CodeLike | CodeInfo) -> CodeInfo:
        info = code if isinstance(code, CodeInfo) else CodeInfo.of(code)
        self._code[normalize_address(address)] = info
        self._index = None
        return info

    # -- reading --------------------------------------------------------

    @property
    def messages(self) -> list[Message]:
        return sorted(self._messages.values())

    def code_info(self, address: str) -> CodeInfo | None:
        return self._code.get(address)

    def interface(self, address: str) -> InterfaceSet | None:
        info = self._code.get(address)
        return info.interface if info else None

    def _build_index(self) -> dict:
        creations: dict[str, Message] = {}
        by_address: dict[str, list[Message]] = defaultdict(list)
        for msg in self.messages:
            by_address[msg.sender].append(msg)
            if msg.to is not None and msg.to != msg.sender:
                by_address[msg.to].append(msg)
            if msg.kind.creates and msg.success and msg.to not in creations:
                creations[msg.to] = msg
        contracts = {}
        known = set(creations) | set(self._code)
        for address, msg in creations.items():
            info = self._code.get(address)
            contracts[address] = ContractRecord(
                address=address,
                creator=msg.sender,
                creator_is_contract=msg.sender in known,
                block=msg.block,
                tx_id=msg.tx_id,
                bytecode_hash=info.bytecode_hash if info else None,
                skeleton_hash=info.skeleton_hash if info else None,
            )
        children: dict[str, list[str]] = defaultdict(list)
        for rec in contracts.values():
            children[rec.creator].append(rec.address)
        return {
            "contracts": contracts,
            "by_address": dict(by_address),
            "children": {k: sorted(v) for k, v in children.items()},
            "known": known,
        }

    @property
    def index(self) -> dict:
        if self._index is None:
            self._index = self._build_index()
        return self._index

    @property
    def contracts(self) -> dict[str, ContractRecord]:
        return self.index["contracts"]

    def is_contract(self, address: str | None) -> bool:
        return address is not None and address in self.index["known"]

    def children(self, creator: str) -> list[str]:
        return self.index["children"].get(creator, [])

    def messages_of(self, address: str) -> list[Message]:
        return self.index["by_address"].get(address, [])

    def creators(self) -> dict[str, str]:
        return {a: r.creator for a, r in self.contracts.items()}

    def interfaces(self) -> dict[str, InterfaceSet]:
        return {a: i.interface for a, i in self._code.items()}

    def snapshot(self) -> tuple:
        """Hashable summary used to compare registries."""
        return (tuple(self.messages), tuple(sorted(self.contracts.items())))


def ingest_traces(messages: Iterable[Message], registry: Registry | None = None) -> Registry:
    registry = registry or Registry()
    registry.ingest(messages)
    return registry


# -- factories ---------------------------------------------------------------


@dataclass(frozen=True)
class FactoryProfile:
    creator: str
    children: int
    distinct_skeletons: int
    histogram: tuple[tuple[str, int], ...]
    is_factory: bool = False


DEFAULT_MIN_CHILDREN = 10
DEFAULT_MAX_SKELETONS = 3


def factory_profiles(
    registry: Registry,
    min_children: int = DEFAULT_MIN_CHILDREN,
    max_skeletons: int = DEFAULT_MAX_SKELETONS,
) -> list[FactoryProfile]:
    """One profile per creator; children of unknown code share one bucket."""
    out = []
    for creator in sorted(registry.index["children"]):
        kids = registry.children(creator)
        hist = Counter(
            (rec.skeleton_hash.hex() if rec.skeleton_hash else "-")
            for rec in (registry.contracts[k] for k in kids)
        )
        out.append(
            FactoryProfile(
                creator=creator,
                children=len(kids),
                distinct_skeletons=len(hist),
                histogram=tuple(sorted(hist.items())),
                is_factory=len(kids) >= min_children and len(hist) <= max_skeletons,
            )
        )
    return out


def identify_factories(
    registry: Registry,
    min_children: int = DEFAULT_MIN_CHILDREN,
    max_skeletons: int = DEFAULT_MAX_SKELETONS,
) -> list[FactoryProfile]:
    return [p for p in factory_profiles(registry, min_children, max_skeletons) if p.is_factory]


# -- trace patterns ------------------------------------------------------------

CONSTRUCTOR_1 = selector_of("constructor(address)")
CONSTRUCTOR_2 = selector_of("constructor(address,address)")
SWEEP_SELECTORS = frozenset({selector_of("sweep(address,uint256)"), selector_of("sweepAll(address)")})
SWEEPER_EXTRAS = frozenset({selector_of("controller()")})
WALLET_EXTRAS = frozenset({selector_of("tokenFallback(address,uint256,bytes)")})


def twin_pairs(registry: Registry) -> list[tuple[str, str, str]]:
    """(tx_id, wallet, companion) for each Ambi-style twin initialisation."""
    by_tx: dict[str, tuple[set[str], set[str]]] = defaultdict(lambda: (set(), set()))
    for msg in registry.messages:
        if msg.kind is not MessageKind.DELEGATECALL or not msg.success:
            continue
        if msg.selector == CONSTRUCTOR_1:
            by_tx[msg.tx_id][0].add(msg.sender)
        elif msg.selector == CONSTRUCTOR_2:
            by_tx[msg.tx_id][1].add(msg.sender)
    pairs = []
    for tx_id in sorted(by_tx):
        wallets, companions = by_tx[tx_id]
        for wallet in sorted(wallets):
            for companion in sorted(companions - {wallet}):
                pairs.append((tx_id, wallet, companion))
    return pairs


def _only(iface: InterfaceSet | None, core: frozenset[Selector], extras: frozenset[Selector]) -> bool:
    """The interface has one of ``core`` and nothing outside core and extras."""
    if iface is None:
        return False
    have = iface.selectors
    return bool(have & core) and have <= core | extras


@dataclass(frozen=True)
class ControllerEvidence:
    controller: str
    sweepers: tuple[str, ...]
    wallets: tuple[str, ...]
    wallet_skeleton: bytes | None


def controller_evidence(registry: Registry, controller: str) -> ControllerEvidence | None:
    """Check the four controller criteria for one contract; None if any fails."""
    rec = registry.contracts.get(controller)
    if rec is None:
        return None
    kids = [registry.contracts[k] for k in registry.children(controller)]
    during_deploy = [k for k in kids if k.tx_id == rec.tx_id]
    sweepers = tuple(
        k.address for k in during_deploy
        if _only(registry.interface(k.address), SWEEP_SELECTORS, SWEEPER_EXTRAS)
    )
    if not sweepers:
        return None
    wallets = [k for k in kids if k.tx_id != rec.tx_id]
    if not wallets:
        return None
    families = {w.skeleton_hash for w in wallets}
    if len(families) != 1 or None in families:
        return None
    if not all(_only(registry.interface(w.address), SWEEP_SELECTORS, WALLET_EXTRAS) for w in wallets):
        return None
    return ControllerEvidence(controller, sweepers, tuple(w.address for w in wallets), families.pop())


def match_trace_patterns(
    registry: Registry,
    kind: TracePatternKind,
    blueprint: Blueprint | None = None,
) -> frozenset[str]:
    """Addresses exhibiting a trace pattern.

    Twin delegatecalls yield wallet and companion; the controller pattern
    yields controllers; factory lineage yields the children of matching
    creators and needs the ``blueprint`` carrying the factory rule.
    """
    kind = TracePatternKind(kind)
    if kind is TracePatternKind.TWIN_CONSTRUCTOR_DELEGATECALL:
        return frozenset(a for _, w, c in twin_pairs(registry) for a in (w, c))
    if kind is TracePatternKind.CONTROLLER_SWEEPER:
        return frozenset(c for c in registry.contracts if controller_evidence(registry, c))
    if blueprint is None:
        raise ValueError("factory_lineage matching needs a blueprint")
    interfaces = registry.interfaces()
    return frozenset(
        addr for addr, rec in registry.contracts.items()
        if blueprint.is_factory(rec.creator, interfaces.get(rec.creator))
    )


# -- usage ---------------------------------------------------------------------


class UsageBucket(str, enum.Enum):
    BOTH = "both"
    ETH_ONLY = "eth_only"
    TOKENS_ONLY = "tokens_only"
    UNUSED = "unused"

    @classmethod
    def of(cls, held_eth: bool, held_tokens: bool) -> UsageBucket:
        if held_eth and held_tokens:
            return cls.BOTH
        if held_eth:
            return cls.ETH_ONLY
        if held_tokens:
            return cls.TOKENS_ONLY
        return cls.UNUSED


@dataclass(frozen=True)
class UsageProfile:
    address: str
    held_eth: bool
    held_tokens: bool

    @property
    def bucket(self) -> UsageBucket:
        return UsageBucket.of(self.held_eth, self.held_tokens)


def build_usage_profiles(
    registry: Registry,
    token_events: Iterable[TokenEvent] = (),
    token_calls: Iterable[TokenCall] = (),
    addresses: Iterable[str] | None = None,
) -> dict[str, UsageProfile]:
    """ETH and token holder flags for every address seen (or the given ones)."""
    eth: set[str] = set()
    seen: set[str] = set()
    for msg in registry.messages:
        seen.add(msg.sender)
        if msg.to:
            seen.add(msg.to)
        if msg.success and msg.value > 0:
            eth.add(msg.sender)
            if msg.to:
                eth.add(msg.to)
    tokens: set[str] = set()
    for ev in token_events:
        tokens.update((ev.sender, ev.recipient))
        seen.add(ev.emitter)
    for call in token_calls:
        seen.add(call.token)
        if call.selector in HOLDER_SELECTORS:
            tokens.update(call.holders)
    universe = set(addresses) if addresses is not None else seen | eth | tokens
    return {a: UsageProfile(a, a in eth, a in tokens) for a in sorted(universe)}


BIN_SIZE = 100_000


def usage_bins(
    profiles: Mapping[str, UsageProfile],
    creation_block: Mapping[str, int],
    bin_size: int = BIN_SIZE,
) -> dict[int, Counter]:
    """Bucket counts of created addresses per block bin (keyed by bin start)."""
    bins: dict[int, Counter] = defaultdict(Counter)
    for address, block in creation_block.items():
        profile = profiles.get(address) or UsageProfile(address, False, False)
        bins[block // bin_size * bin_size][profile.bucket] += 1
    return dict(sorted(bins.items()))


# -- variety -------------------------------------------------------------------


@dataclass(frozen=True)
class VarietyCounts:
    deployments: int = 0
    bytecodes: int = 0
    skeletons: int = 0
    creators: int = 0

    @property
    def deployments_per_skeleton(self) -> float | None:
        return self.deployments / self.skeletons if self.skeletons else None

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.deployments, self.bytecodes, self.skeletons, self.creators)


def count_variety(rows: Iterable[tuple[bytes | None, bytes | None, str | None]]) -> VarietyCounts:
    """Distinct counts over (bytecode hash, skeleton hash, creator) rows."""
    n, codes, skels, creators = 0, set(), set(), set()
    for code, skel, creator in rows:
        n += 1
        if code is not None:
            codes.add(code)
        if skel is not None:
            skels.add(skel)
        if creator is not None:
            creators.add(creator)
    return VarietyCounts(n, len(codes), len(skels), len(creators))


@dataclass
class VarietyReport:
    by_type: dict[WalletType, VarietyCounts] = field(default_factory=dict)
    by_blueprint: dict[str, VarietyCounts] = field(default_factory=dict)
    all_wallets: VarietyCounts = VarietyCounts()
    all_contracts: VarietyCounts = VarietyCounts()


def variety_report(registry: Registry, classification: Mapping[str, Classification]) -> VarietyReport:
    def row(rec: ContractRecord):
        return (rec.bytecode_hash, rec.skeleton_hash, rec.creator)

    contracts = registry.contracts
    wallets = [(contracts[a], c) for a, c in sorted(classification.items()) if a in contracts]
    report = VarietyReport()
    for wt in WalletType:
        report.by_type[wt] = count_variety(row(r) for r, c in wallets if c.wallet_type is wt)
    for name in sorted({c.blueprint for _, c in wallets}):
        report.by_blueprint[name] = count_variety(row(r) for r, c in wallets if c.blueprint == name)
    report.all_wallets = count_variety(row(r) for r, _ in wallets)
    report.all_contracts = count_variety(row(r) for r in contracts.values())
    return report


def trace_context(
    registry: Registry,
    creators: Mapping[str, str] | None = None,
    interfaces: Mapping[str, InterfaceSet] | None = None,
) -> TraceContext:
    """Collect the trace evidence :func:`~walletscope.blueprint.classify` uses.

    Only wallets are recorded: the wallet side of a twin initialisation (not
    its companion) and the wallets of a controller (not the controller or its
    sweepers).
    """
    all_creators = dict(creators or {})
    all_creators.update(registry.creators())
    all_interfaces = dict(interfaces or {})
    all_interfaces.update(registry.interfaces())
    return TraceContext(
        creators=all_creators,
        interfaces=all_interfaces,
        pattern_matches={
            TracePatternKind.TWIN_CONSTRUCTOR_DELEGATECALL: frozenset(
                w for _, w, _ in twin_pairs(registry)
            ),
            TracePatternKind.CONTROLLER_SWEEPER: frozenset(
                w for c in registry.contracts
                if (ev := controller_evidence(registry, c)) is not None
                for w in ev.wallets
            ),
        },
    )

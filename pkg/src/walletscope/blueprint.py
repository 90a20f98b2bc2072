"""Wallet blueprints: declarative identification rules and classification.

Rule file grammar
-----------------

One record per blueprint.  A record starts with an unindented line
``<name>: <wallet type>`` and continues with clauses, separated by ``;`` on
the same line or placed on indented continuation lines::

    # comment
    AutoWallet: simple; required transferNonFungibleToken(address,address,uint256)

    Wallet1: simple
      features eth erc20_tokens forwarding
      required flushERC20(address) flushETH()
      trace factory_lineage
      factory_addresses 0x92a1d964b8fc79c5694343cc943c27a94a3be131
      provenance simple wallets / Wallet1

Clauses (each keyword at most once):

``features``            feature names, space separated
``required``            headers (or ``0x``-prefixed selectors) that must all be present
``any_of``              at least one of these must be present
``optional``            tolerated headers, not counted as extras
``forbidden``           none of these may be present
``max_extra``           bound on selectors outside required, any_of and optional
``trace``               factory_lineage | twin_constructor_delegatecall | controller_sweeper
``factory_required``    the creator's interface must contain all of these
``factory_any_of``      ... and at least one of these
``factory_addresses``   explicit creator addresses
``combine``             ``any`` (default): signature or trace evidence suffices;
                        ``all``: both are needed
``provenance``          free text up to the end of the line

Headers contain no whitespace, so lists are whitespace separated.
:func:`dump_blueprints` writes the canonical layout (one clause per line, in
the order above, blank line between records).
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .evm import normalize_address
from .interface import HeaderError, InterfaceSet, Selector, canonicalize, selector_of


class WalletType(str, enum.Enum):
    SIMPLE = "simple"
    MULTISIG = "multisig"
    FORWARDER = "forwarder"
    CONTROLLED = "controlled"
    UPDATE = "update"
    SMART = "smart"


class Feature(str, enum.Enum):
    ETH = "eth"
    ERC20_TOKENS = "erc20_tokens"
    ADVANCED_TOKENS = "advanced_tokens"
    OWNER_ADMIN = "owner_admin"
    MULTISIG = "multisig"
    COSIGNER = "cosigner"
    THIRD_PARTY_CONTROL = "third_party_control"
    FORWARDING = "forwarding"
    FLEXIBLE_TRANSACTIONS = "flexible_transactions"
    DAILY_LIMIT_TIMELOCK = "daily_limit_timelock"
    RECOVERY = "recovery"
    LIFECYCLE = "lifecycle"
    UPDATE_LOGIC = "update_logic"
    MODULE_ADMIN = "module_admin"


class TracePatternKind(str, enum.Enum):
    FACTORY_LINEAGE = "factory_lineage"
    TWIN_CONSTRUCTOR_DELEGATECALL = "twin_constructor_delegatecall"
    CONTROLLER_SWEEPER = "controller_sweeper"


class BlueprintError(ValueError):
    def __init__(self, message: str, lineno: int | None = None) -> None:
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


def _entry_selector(entry: str) -> Selector:
    return selector_of(entry) if "(" in entry else Selector.parse(entry)


def _canonical_entry(entry: str) -> str:
    return canonicalize(entry) if "(" in entry else Selector.parse(entry).hex


@dataclass(frozen=True)
class SignatureRule:
    required: tuple[str, ...] = ()
    optional: tuple[str, ...] = ()
    forbidden: tuple[str, ...] = ()
    any_of: tuple[str, ...] = ()
    max_extra: int | None = None

    def __post_init__(self) -> None:
        for name in ("required", "optional", "forbidden", "any_of"):
            object.__setattr__(self, name, tuple(_canonical_entry(e) for e in getattr(self, name)))
        if not self.required and not self.any_of:
            raise BlueprintError("signature rule needs required or any_of headers")
        if self.required_selectors & self.forbidden_selectors:
            raise BlueprintError("a header is both required and forbidden")
        if self.max_extra is not None and self.max_extra < 0:
            raise BlueprintError("max_extra must be non-negative")

    @property
    def required_selectors(self) -> frozenset[Selector]:
        return frozenset(_entry_selector(e) for e in self.required)

    @property
    def any_of_selectors(self) -> frozenset[Selector]:
        return frozenset(_entry_selector(e) for e in self.any_of)

    @property
    def optional_selectors(self) -> frozenset[Selector]:
        return frozenset(_entry_selector(e) for e in self.optional)

    @property
    def forbidden_selectors(self) -> frozenset[Selector]:
        return frozenset(_entry_selector(e) for e in self.forbidden)

    @property
    def specificity(self) -> int:
        return len(self.required_selectors) + (1 if self.any_of else 0)

    def extras(self, iface: InterfaceSet) -> int:
        known = self.required_selectors | self.any_of_selectors | self.optional_selectors
        return len(iface.selectors - known)

    def matches(self, iface: InterfaceSet) -> bool:
        have = iface.selectors
        if not self.required_selectors <= have:
            return False
        if self.any_of and not self.any_of_selectors & have:
            return False
        if self.forbidden_selectors & have:
            return False
        return self.max_extra is None or self.extras(iface) <= self.max_extra


@dataclass(frozen=True)
class Blueprint:
    name: str
    wallet_type: WalletType
    features: frozenset[Feature] = frozenset()
    signature_rule: SignatureRule | None = None
    trace_rule: TracePatternKind | None = None
    factory_rule: SignatureRule | None = None
    factory_addresses: frozenset[str] = frozenset()
    combine_all: bool = False
    provenance: str = ""

    def __post_init__(self) -> None:
        if self.signature_rule is None and self.trace_rule is None:
            raise BlueprintError(f"{self.name}: needs a signature rule or a trace rule")
        lineage = self.trace_rule is TracePatternKind.FACTORY_LINEAGE
        if lineage and self.factory_rule is None and not self.factory_addresses:
            raise BlueprintError(f"{self.name}: factory_lineage needs a factory rule or addresses")
        if not lineage and (self.factory_rule is not None or self.factory_addresses):
            raise BlueprintError(f"{self.name}: factory clauses require trace factory_lineage")
        if self.combine_all and (self.signature_rule is None or self.trace_rule is None):
            raise BlueprintError(f"{self.name}: combine all needs both signature and trace rules")

    def is_factory(self, creator: str, creator_iface: InterfaceSet | None) -> bool:
        if creator in self.factory_addresses:
            return True
        return (
            self.factory_rule is not None
            and creator_iface is not None
            and self.factory_rule.matches(creator_iface)
        )


@dataclass(frozen=True)
class RuleSet:
    blueprints: tuple[Blueprint, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for bp in self.blueprints:
            if bp.name in seen:
                raise BlueprintError(f"duplicate blueprint name {bp.name!r}")
            seen.add(bp.name)

    def __iter__(self):
        return iter(self.blueprints)

    def __len__(self) -> int:
        return len(self.blueprints)

    def __getitem__(self, name: str) -> Blueprint:
        for bp in self.blueprints:
            if bp.name == name:
                return bp
        raise KeyError(name)

    def headers(self) -> list[str]:
        """Every function header mentioned anywhere in the rules."""
        out = set()
        for bp in self.blueprints:
            for rule in (bp.signature_rule, bp.factory_rule):
                if rule is not None:
                    for group in (rule.required, rule.optional, rule.forbidden, rule.any_of):
                        out.update(e for e in group if "(" in e)
        return sorted(out)


_LIST_CLAUSES = (
    "features", "required", "any_of", "optional", "forbidden",
)
_CLAUSE_ORDER = (
    "features", "required", "any_of", "optional", "forbidden", "max_extra", "trace",
    "factory_required", "factory_any_of", "factory_addresses", "combine", "provenance",
)


def _build(name: str, type_text: str, clauses: dict[str, str], lineno: int) -> Blueprint:
    def words(key: str) -> list[str]:
        return clauses.get(key, "").split()

    try:
        wallet_type = WalletType(type_text)
    except ValueError:
        raise BlueprintError(f"unknown wallet type {type_text!r}", lineno) from None
    try:
        features = frozenset(Feature(f) for f in words("features"))
    except ValueError as exc:
        raise BlueprintError(str(exc), lineno) from None
    try:
        max_extra = int(clauses["max_extra"]) if "max_extra" in clauses else None
        signature_rule = None
        if any(k in clauses for k in ("required", "any_of", "optional", "forbidden", "max_extra")):
            signature_rule = SignatureRule(
                required=tuple(words("required")),
                optional=tuple(words("optional")),
                forbidden=tuple(words("forbidden")),
                any_of=tuple(words("any_of")),
                max_extra=max_extra,
            )
        factory_rule = None
        if "factory_required" in clauses or "factory_any_of" in clauses:
            factory_rule = SignatureRule(
                required=tuple(words("factory_required")),
                any_of=tuple(words("factory_any_of")),
            )
        trace_rule = TracePatternKind(clauses["trace"]) if "trace" in clauses else None
        combine = clauses.get("combine", "any")
        if combine not in ("any", "all"):
            raise BlueprintError(f"combine must be any or all, not {combine!r}")
        return Blueprint(
            name=name,
            wallet_type=wallet_type,
            features=features,
            signature_rule=signature_rule,
            trace_rule=trace_rule,
            factory_rule=factory_rule,
            factory_addresses=frozenset(normalize_address(a) for a in words("factory_addresses")),
            combine_all=combine == "all",
            provenance=clauses.get("provenance", ""),
        )
    except BlueprintError as exc:
        raise BlueprintError(str(exc).removeprefix(f"line {exc.lineno}: "), lineno) from None
    except (HeaderError, ValueError) as exc:
        raise BlueprintError(str(exc), lineno) from None


def parse_blueprints(text: str) -> RuleSet:
    records: list[tuple[int, str, str, dict[str, str]]] = []

    def add_clauses(chunk: str, lineno: int) -> None:
        if not records:
            raise BlueprintError("clause outside a record", lineno)
        clauses = records[-1][3]
        parts = chunk.split(";")
        for i, part in enumerate(parts):
            part = part.strip()
            if not part:
                continue
            key, _, value = part.partition(" ")
            if key == "provenance":
                value = ";".join([value] + parts[i + 1 :])
            if key not in _CLAUSE_ORDER:
                raise BlueprintError(f"unknown clause {key!r}", lineno)
            if key in clauses:
                raise BlueprintError(f"repeated clause {key!r}", lineno)
            clauses[key] = value.strip()
            if key == "provenance":
                break

    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if line[0].isspace():
            add_clauses(line, lineno)
            continue
        head, sep, rest = line.partition(";")
        name, colon, type_text = head.rpartition(":")
        if not colon or not name.strip():
            raise BlueprintError("expected '<name>: <type>'", lineno)
        records.append((lineno, name.strip(), type_text.strip(), {}))
        if sep:
            add_clauses(rest, lineno)

    blueprints = []
    names: set[str] = set()
    for lineno, name, type_text, clauses in records:
        if name in names:
            raise BlueprintError(f"duplicate blueprint name {name!r}", lineno)
        names.add(name)
        blueprints.append(_build(name, type_text, clauses, lineno))
    return RuleSet(tuple(blueprints))


def load_blueprints(path: str | Path | None = None) -> RuleSet:
    """Load a rule file; without a path, the rules shipped with the package."""
    if path is None:
        text = resources.files("walletscope").joinpath("data/blueprints.rules").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_blueprints(text)


def dump_blueprints(rules: RuleSet, header: str = "") -> str:
    out = [f"# {line}".rstrip() for line in header.splitlines()]
    for bp in rules:
        if out:
            out.append("")
        out.append(f"{bp.name}: {bp.wallet_type.value}")
        clauses: dict[str, str] = {}
        if bp.features:
            clauses["features"] = " ".join(f.value for f in Feature if f in bp.features)
        rule = bp.signature_rule
        if rule is not None:
            for key in _LIST_CLAUSES[1:]:
                if getattr(rule, key):
                    clauses[key] = " ".join(getattr(rule, key))
            if rule.max_extra is not None:
                clauses["max_extra"] = str(rule.max_extra)
        if bp.trace_rule is not None:
            clauses["trace"] = bp.trace_rule.value
        if bp.factory_rule is not None:
            if bp.factory_rule.required:
                clauses["factory_required"] = " ".join(bp.factory_rule.required)
            if bp.factory_rule.any_of:
                clauses["factory_any_of"] = " ".join(bp.factory_rule.any_of)
        if bp.factory_addresses:
            clauses["factory_addresses"] = " ".join(sorted(bp.factory_addresses))
        if bp.combine_all:
            clauses["combine"] = "all"
        if bp.provenance:
            clauses["provenance"] = bp.provenance
        out.extend(f"  {key} {clauses[key]}" for key in _CLAUSE_ORDER if key in clauses)
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class MatchResult:
    blueprint: str
    wallet_type: WalletType
    matched: bool
    matched_required_count: int
    extra_selector_count: int

    @property
    def rank_key(self) -> tuple[int, int, str]:
        return (-self.matched_required_count, self.extra_selector_count, self.blueprint)


def evaluate(iface: InterfaceSet, bp: Blueprint) -> MatchResult | None:
    rule = bp.signature_rule
    if rule is None:
        return None
    have = iface.selectors
    count = len(rule.required_selectors & have) + (1 if rule.any_of_selectors & have else 0)
    return MatchResult(bp.name, bp.wallet_type, rule.matches(iface), count, rule.extras(iface))


def match_interface(iface: InterfaceSet, rules: RuleSet) -> list[MatchResult]:
    """Matching signature rules, most specific first."""
    results = [r for bp in rules if (r := evaluate(iface, bp)) is not None and r.matched]
    return sorted(results, key=lambda r: r.rank_key)


@dataclass
class TraceContext:
    """Trace evidence that classification can draw on.

    ``creators`` maps a contract to the address that created it,
    ``interfaces`` holds known interfaces (used for factory rules), and
    ``pattern_matches`` lists the wallets confirmed by the parameterless
    trace patterns: the constructor(address) side of a twin initialisation,
    and the later children of a recognised controller.
    """

    creators: Mapping[str, str] = field(default_factory=dict)
    interfaces: Mapping[str, InterfaceSet] = field(default_factory=dict)
    pattern_matches: Mapping[TracePatternKind, frozenset[str]] = field(default_factory=dict)

    def trace_confirms(self, address: str, bp: Blueprint) -> bool:
        kind = bp.trace_rule
        if kind is None:
            return False
        if kind is TracePatternKind.FACTORY_LINEAGE:
            creator = self.creators.get(address)
            return creator is not None and bp.is_factory(creator, self.interfaces.get(creator))
        return address in self.pattern_matches.get(kind, frozenset())


@dataclass(frozen=True)
class Classification:
    blueprint: str
    wallet_type: WalletType
    by_trace: bool


def classify(
    address,
    iface: InterfaceSet,
    rules: RuleSet,
    context: TraceContext | None = None,
) -> Classification | None:
    """Pick at most one blueprint for the contract at ``address``.

    ``address`` may also be a registry record carrying an ``address``.

    Blueprints confirmed by trace evidence win over pure signature matches;
    within each group the :func:`match_interface` ranking decides.
    """
    address = getattr(address, "address", address)
    context = context or TraceContext()
    confirmed: list[tuple[tuple, Blueprint]] = []
    signature_only: list[tuple[tuple, Blueprint]] = []
    for bp in rules:
        result = evaluate(iface, bp)
        sig_ok = result is not None and result.matched
        key = result.rank_key if result is not None else (0, len(iface), bp.name)
        if context.trace_confirms(address, bp):
            if sig_ok or not bp.combine_all:
                confirmed.append((key, bp))
        elif sig_ok and not bp.combine_all:
            signature_only.append((key, bp))
    for group, by_trace in ((confirmed, True), (signature_only, False)):
        if group:
            _, bp = min(group, key=lambda item: item[0])
            return Classification(bp.name, bp.wallet_type, by_trace)
    return None


class NoIdiosyncraticSet(ValueError):
    """Seeds share nothing distinctive; the blueprint has to be written by hand."""


DEFAULT_THETA = 0.01


def derive_idiosyncratic_set(
    seeds: Iterable[InterfaceSet],
    corpus_freq: Mapping[Selector, float],
    theta: float = DEFAULT_THETA,
) -> frozenset[Selector]:
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed interface")
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    common = frozenset.intersection(*(s.selectors for s in seeds))
    if not common:
        raise NoIdiosyncraticSet("seed interfaces have no selector in common")
    result = frozenset(s for s in common if corpus_freq.get(s, 0.0) <= theta)
    if not result:
        raise NoIdiosyncraticSet(f"every shared selector occurs in more than {theta:.2%} of the corpus")
    return result


def document_frequency(corpus: Iterable[InterfaceSet]) -> dict[Selector, float]:
    counts: dict[Selector, int] = {}
    total = 0
    for iface in corpus:
        total += 1
        for sel in iface.selectors:
            counts[sel] = counts.get(sel, 0) + 1
    return {sel: n / total for sel, n in counts.items()} if total else {}


NAME_PATTERNS = ("wallet", "Wallet")


def filter_by_name(
    rows: Iterable[tuple[str, str]], patterns: Iterable[str] = NAME_PATTERNS
) -> list[tuple[str, str]]:
    """(address, contract name) rows whose name contains one of the patterns."""
    patterns = tuple(patterns)
    return [(addr, name) for addr, name in rows if any(p in name for p in patterns)]


def read_name_corpus(path: str | Path) -> list[tuple[str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            addr, _, name = line.partition("\t")
            rows.append((normalize_address(addr), name.split("\t")[0]))
    return rows

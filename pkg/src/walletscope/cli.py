"""walletscope command line.

All machine-readable output goes to stdout and diagnostics to stderr.  Data
lives in a home directory holding the record log and the normalised trace,
event and token-call files::

    <home>/store.log  <home>/traces.tsv  <home>/events.tsv  <home>/calls.tsv

Settings resolve as flags, then environment, then config file, then
defaults.  The config file is INI with a ``[walletscope]`` section; keys
match the long flag names (``home``, ``rules``, ``jobs``, ``directory``,
``rpc_url``).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .blueprint import (
    DEFAULT_THETA,
    BlueprintError,
    NoIdiosyncraticSet,
    RuleSet,
    classify,
    derive_idiosyncratic_set,
    document_frequency,
    load_blueprints,
)
from .evm import Source, from_hex, read_hex_lines
from .graph import build_call_graph
from .interface import InterfaceSet, SignatureDirectory, extract_interface, load_directory, restore_headers
from .report import (
    classification_lines,
    factory_lines,
    graph_lines,
    usage_lines,
    variety_lines,
)
from .skeleton import skeletonize
from .store import Store, StoreCorruption
from .trace import (
    DEFAULT_MAX_SKELETONS,
    DEFAULT_MIN_CHILDREN,
    CodeInfo,
    Registry,
    TokenCall,
    TokenEvent,
    build_usage_profiles,
    factory_profiles,
    read_token_calls,
    read_token_events,
    read_traces,
    trace_context,
)

log = logging.getLogger("walletscope")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CORRUPT = 0, 1, 2, 3

ENV = {
    "home": "WALLETSCOPE_HOME",
    "rules": "WALLETSCOPE_RULES",
    "jobs": "WALLETSCOPE_JOBS",
    "directory": "WALLETSCOPE_DIRECTORY",
    "rpc_url": "WALLETSCOPE_RPC_URL",
}
DEFAULTS = {"home": "walletscope-data", "rules": None, "jobs": "1", "directory": None, "rpc_url": None}
CONFIG_ENV = "WALLETSCOPE_CONFIG"
CONFIG_NAME = "walletscope.ini"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Settings:
    home: Path
    rules: str | None
    jobs: int
    directory: str | None
    rpc_url: str | None

    @property
    def store_path(self) -> Path:
        return self.home / "store.log"

    def data_file(self, name: str) -> Path:
        return self.home / f"{name}.tsv"


def resolve_settings(args: argparse.Namespace, environ=os.environ) -> Settings:
    config_path = getattr(args, "config", None) or environ.get(CONFIG_ENV)
    file_values: dict[str, str] = {}
    if config_path is None and Path(CONFIG_NAME).is_file():
        config_path = CONFIG_NAME
    if config_path is not None:
        parser = configparser.ConfigParser()
        with open(config_path, encoding="utf-8") as fh:
            parser.read_file(fh)
        if parser.has_section("walletscope"):
            file_values = dict(parser["walletscope"])
    values = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
        elif environ.get(ENV[key]):
            values[key] = environ[ENV[key]]
        elif key in file_values:
            values[key] = file_values[key]
        else:
            values[key] = default
    try:
        jobs = int(values["jobs"])
    except ValueError:
        raise UsageError(f"jobs must be an integer, not {values['jobs']!r}") from None
    if jobs < 1:
        raise UsageError("jobs must be at least 1")
    return Settings(Path(values["home"]), values["rules"], jobs, values["directory"], values["rpc_url"])


def fan_out(fn: Callable, items: Sequence, jobs: int) -> list:
    """Map ``fn`` over ``items``; results come back in input order."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (jobs * 4))))


# -- per-line workers (module level so worker processes can pickle them) ------


def _skeleton_line(text: str) -> str:
    try:
        skel = skeletonize(from_hex(text))
    except ValueError as exc:
        log.warning("skipping %r: %s", text[:20], exc)
        return "- -"
    return f"{skel.hex} {skel.hash_hex}"


def _creation_skeleton_line(text: str) -> str:
    try:
        skel = skeletonize(from_hex(text), Source.CREATION)
    except ValueError as exc:
        log.warning("skipping %r: %s", text[:20], exc)
        return "- -"
    return f"{skel.hex} {skel.hash_hex}"


def _interface_of(text: str) -> InterfaceSet | None:
    try:
        return extract_interface(from_hex(text))
    except ValueError as exc:
        log.warning("skipping %r: %s", text[:20], exc)
        return None


def _code_info(data: bytes) -> CodeInfo:
    return CodeInfo.of(data)


# -- data files ------------------------------------------------------------


def _merge_file(path: Path, new_lines: Iterable[str]) -> tuple[int, int]:
    """Union ``new_lines`` into a sorted, duplicate-free file.

    Returns (lines added, total lines).
    """
    existing: set[str] = set()
    if path.exists():
        existing = {ln for ln in path.read_text(encoding="utf-8").splitlines() if ln}
    merged = existing | set(new_lines)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(ln + "\n" for ln in sorted(merged)), encoding="utf-8")
    return len(merged) - len(existing), len(merged)


def _read_optional(path: Path, reader) -> list:
    if not path.exists():
        return []
    records, _ = reader(path)
    return records


def _load_registry(settings: Settings, store: Store) -> Registry:
    registry = Registry()
    registry.ingest(_read_optional(settings.data_file("traces"), read_traces))
    records = list(store.addresses())
    infos = fan_out(_code_info, [store.get_code(r.bytecode_hash).data for r in records], settings.jobs)
    for rec, info in zip(records, infos):
        registry.attach_code(rec.address, info)
    return registry


def _rules(settings: Settings) -> RuleSet:
    return load_blueprints(settings.rules)


def _directory(settings: Settings, override: str | None) -> SignatureDirectory | None:
    path = override or settings.directory
    if path is None:
        return None
    directory, _ = load_directory(path)
    return directory


def _emit(lines: Iterable[str]) -> None:
    out = sys.stdout
    for line in lines:
        out.write(line + "\n")


# -- commands --------------------------------------------------------------


def cmd_ingest_code(args, settings: Settings) -> int:
    store = Store(settings.store_path)
    codes = addresses = rejected = 0
    client = None
    if args.rpc:
        from .rpc import JsonRpcClient

        client = JsonRpcClient(settings.rpc_url)
    for lineno, line in enumerate(read_hex_lines(args.file), 1):
        fields = line.split("\t")
        try:
            if client is not None:
                address, data = fields[0], client.get_code(fields[0])
                extra = fields[1:]
            elif len(fields) == 1:
                store.put_code(from_hex(fields[0]))
                codes += 1
                continue
            else:
                address, data, extra = fields[0], from_hex(fields[1]), fields[2:]
            creator = extra[0] if extra and extra[0] != "-" else None
            block = int(extra[1]) if len(extra) > 1 and extra[1] != "-" else None
            store.put_address(address, data, creator, block)
            addresses += 1
        except ValueError as exc:
            rejected += 1
            log.warning("%s: entry %d rejected: %s", args.file, lineno, exc)
    _emit([f"codes\t{codes}", f"addresses\t{addresses}", f"rejected\t{rejected}"])
    return EXIT_OK


def cmd_ingest_traces(args, settings: Settings) -> int:
    registry = Registry()
    rejected = 0
    for path in args.files:
        messages, errors = read_traces(path)
        registry.ingest(messages)
        rejected += len(errors)
    calls: list[TokenCall] = []
    if args.blocks:
        from .rpc import JsonRpcClient

        client = JsonRpcClient(settings.rpc_url)
        first, last = args.blocks
        for number in range(first, last + 1):
            msgs, found = client.block_messages(number)
            registry.ingest(msgs)
            calls.extend(found)
        _merge_file(settings.data_file("calls"), (c.to_line() for c in calls))
    added, total = _merge_file(settings.data_file("traces"), (m.to_line() for m in registry.messages))
    _emit([f"added\t{added}", f"messages\t{total}", f"rejected\t{rejected}"])
    return EXIT_OK


def cmd_ingest_events(args, settings: Settings) -> int:
    if not args.events and not args.calls:
        raise UsageError("give --events and/or --calls")
    lines = []
    for name, paths, reader in (
        ("events", args.events, read_token_events),
        ("calls", args.calls, read_token_calls),
    ):
        records: list[TokenEvent | TokenCall] = []
        rejected = 0
        for path in paths or ():
            found, errors = reader(path)
            records.extend(found)
            rejected += len(errors)
        if paths:
            added, total = _merge_file(settings.data_file(name), (r.to_line() for r in records))
            lines += [f"{name}_added\t{added}", f"{name}\t{total}", f"{name}_rejected\t{rejected}"]
    _emit(lines)
    return EXIT_OK


def cmd_skeleton(args, settings: Settings) -> int:
    worker = _creation_skeleton_line if args.creation else _skeleton_line
    _emit(fan_out(worker, read_hex_lines(args.file), settings.jobs))
    return EXIT_OK


def cmd_interface(args, settings: Settings) -> int:
    directory = _directory(settings, args.directory)
    lines = []
    for iface in fan_out(_interface_of, read_hex_lines(args.file), settings.jobs):
        if iface is None:
            lines.append("!")
            continue
        if directory is None:
            lines.append(iface.serialize())
            continue
        restored = restore_headers(iface, directory)
        names = ",".join(
            f"{sel}={'|'.join(restored.headers[sel]) if restored.headers[sel] else '?'}"
            for sel in sorted(restored.headers, key=str)
        )
        lines.append(f"{iface.serialize()}\t{restored.ratio:.4f}\t{names or '-'}")
    _emit(lines)
    return EXIT_OK


def cmd_classify(args, settings: Settings) -> int:
    store = Store(settings.store_path)
    rules = _rules(settings)
    registry = _load_registry(settings, store)
    creators = {r.address: r.creator for r in store.addresses() if r.creator}
    context = trace_context(registry, creators=creators)
    contracts = registry.contracts
    profiles = build_usage_profiles(
        registry,
        _read_optional(settings.data_file("events"), read_token_events),
        _read_optional(settings.data_file("calls"), read_token_calls),
        addresses=[r.address for r in store.addresses()],
    )
    results = {}
    for rec in store.addresses():
        known = contracts.get(rec.address)
        if known is not None and (rec.creator is None or rec.block is None):
            store.put_address(
                rec.address, store.get_code(rec.bytecode_hash).data,
                rec.creator or known.creator, rec.block if rec.block is not None else known.block,
            )
        iface = store.get_code(rec.bytecode_hash).interface
        result = classify(rec.address, iface, rules, context)
        results[rec.address] = result
        if not args.dry_run:
            store.set_classification(rec.address, result)
            store.set_usage(rec.address, profiles[rec.address].bucket)
    _emit(classification_lines(results))
    return EXIT_OK


def cmd_factories(args, settings: Settings) -> int:
    store = Store(settings.store_path)
    registry = _load_registry(settings, store)
    profiles = factory_profiles(registry, args.min_children, args.max_skeletons)
    if not args.all:
        profiles = [p for p in profiles if p.is_factory]
    _emit(factory_lines(profiles))
    return EXIT_OK


def cmd_fuzz(args, settings: Settings) -> int:
    seeds = [i for i in (_interface_of(t) for t in read_hex_lines(args.seeds)) if i is not None]
    if not seeds:
        raise UsageError(f"{args.seeds}: no usable seed bytecode")
    if args.corpus:
        corpus = [i for i in (_interface_of(t) for t in read_hex_lines(args.corpus)) if i is not None]
    else:
        store = Store(settings.store_path)
        corpus = [store.get_code(r.bytecode_hash).interface for r in store.addresses()]
    try:
        found = derive_idiosyncratic_set(seeds, document_frequency(corpus), args.theta)
    except NoIdiosyncraticSet as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    directory = _directory(settings, args.directory)
    lines = []
    for sel in sorted(found, key=str):
        headers = directory.get(sel) if directory is not None else []
        lines.append(f"{sel}\t{'|'.join(headers) or '?'}")
    _emit(lines)
    return EXIT_OK


def _graph_section(settings: Settings, store: Store) -> list[str]:
    registry = _load_registry(settings, store)
    graph = build_call_graph(registry.messages, registry)
    wallets = [r.address for r in store.addresses() if r.classification is not None]
    holders = set()
    for ev in _read_optional(settings.data_file("events"), read_token_events):
        holders.update((ev.sender, ev.recipient))
    for call in _read_optional(settings.data_file("calls"), read_token_calls):
        holders.update(call.holders)
    return graph_lines(graph, wallets, holders)


def cmd_graph(args, settings: Settings) -> int:
    _emit(_graph_section(settings, Store(settings.store_path)))
    return EXIT_OK


def cmd_report(args, settings: Settings) -> int:
    store = Store(settings.store_path)
    wanted = [s for s in ("variety", "usage", "graph") if getattr(args, s)]
    sections = []
    for name in wanted or ["variety", "usage", "graph"]:
        if name == "variety":
            sections.append(variety_lines(store))
        elif name == "usage":
            sections.append(usage_lines(store, args.bin_size))
        else:
            sections.append(_graph_section(settings, store))
    for i, section in enumerate(sections):
        if i:
            _emit([""])
        _emit(section)
    return EXIT_OK


# -- parser ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--home", help="data directory (store and trace files)")
    common.add_argument("--rules", help="blueprint rule file (default: packaged rules)")
    common.add_argument("--config", help="INI config file")
    common.add_argument("--jobs", help="worker processes for per-contract analysis")
    common.add_argument("--directory", help="signature directory: '<selector> <header>' lines")
    common.add_argument("--rpc-url", dest="rpc_url", help="JSON-RPC endpoint")
    common.add_argument("-v", "--verbose", action="store_true", help="timestamped diagnostics on stderr")

    parser = _Parser(prog="walletscope", description="Ethereum wallet contract analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command", parser_class=_Parser)

    def add(name: str, func, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help, description=help)
        p.set_defaults(func=func)
        return p

    p = add("ingest-code", cmd_ingest_code, "add bytecodes and deployed addresses to the store")
    p.add_argument("file", help="lines of '0x<code>' or '<address>\\t0x<code>[\\t<creator>\\t<block>]'")
    p.add_argument("--rpc", action="store_true", help="lines hold addresses only; fetch code over RPC")

    p = add("ingest-traces", cmd_ingest_traces, "merge message trace files into the home directory")
    p.add_argument("files", nargs="*", help="trace TSV files")
    p.add_argument("--blocks", nargs=2, type=int, metavar=("FIRST", "LAST"),
                   help="also trace this block range over RPC")

    p = add("ingest-events", cmd_ingest_events, "merge token transfer events and token calls")
    p.add_argument("--events", nargs="+", help="Transfer event TSV files")
    p.add_argument("--calls", nargs="+", help="token call TSV files")

    p = add("skeleton", cmd_skeleton, "print the skeleton and its hash for each bytecode line")
    p.add_argument("file")
    p.add_argument("--creation", action="store_true", help="inputs are creation code")

    p = add("interface", cmd_interface, "print the selector set of each bytecode line")
    p.add_argument("file")

    p = add("classify", cmd_classify, "classify every stored address against the blueprints")
    p.add_argument("--dry-run", action="store_true", help="do not write results back to the store")

    p = add("factories", cmd_factories, "list contracts that act as wallet factories")
    p.add_argument("--min-children", type=int, default=DEFAULT_MIN_CHILDREN)
    p.add_argument("--max-skeletons", type=int, default=DEFAULT_MAX_SKELETONS)
    p.add_argument("--all", action="store_true", help="list every creator, not just factories")

    p = add("fuzz", cmd_fuzz, "derive the idiosyncratic selectors shared by seed bytecodes")
    p.add_argument("seeds", help="seed bytecodes, one per line")
    p.add_argument("--corpus", help="reference bytecodes (default: every stored address)")
    p.add_argument("--theta", type=float, default=DEFAULT_THETA, help="document frequency cut-off")

    add("graph", cmd_graph, "connected components of the contract call graph")

    p = add("report", cmd_report, "variety tables, usage per block bin and graph statistics")
    p.add_argument("--variety", action="store_true")
    p.add_argument("--usage", action="store_true")
    p.add_argument("--graph", action="store_true")
    p.add_argument("--bin-size", type=int, default=100_000)
    return parser


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    fmt = "%(asctime)s %(levelname)s %(message)s" if verbose else "walletscope: %(levelname)s: %(message)s"
    handler.setFormatter(logging.Formatter(fmt))
    root = logging.getLogger("walletscope")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)
    root.propagate = False


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    _setup_logging(args.verbose)
    try:
        settings = resolve_settings(args)
        log.debug("command %s with home %s", args.command, settings.home)
        return args.func(args, settings)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except StoreCorruption as exc:
        log.error("store corrupted: %s", exc)
        return EXIT_CORRUPT
    except BlueprintError as exc:
        log.error("rule file: %s", exc)
        return EXIT_USAGE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

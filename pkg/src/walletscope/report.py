"""Machine-readable report sections.

Every section is tab-separated text: a ``# <section>`` marker, a column
header, then rows in a fixed order.  Nothing here depends on time or on
dictionary iteration order, so equal inputs give byte-equal output.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Mapping

from .blueprint import WalletType
from .graph import CallGraph, ComponentStats, connected_components, remove_and_recompute
from .store import Store
from .trace import BIN_SIZE, UsageBucket, VarietyCounts

VARIETY_COLUMNS = ("scope", "name", "deployments", "bytecodes", "skeletons", "creators")
USAGE_COLUMNS = ("bin_start", "scope") + tuple(b.value for b in UsageBucket)
GRAPH_COLUMNS = ("stage", "nodes", "edges", "components", "largest", "top10")


def _row(*fields) -> str:
    return "\t".join(str(f) for f in fields)


def _counts(scope: str, name: str, c: VarietyCounts) -> str:
    return _row(scope, name, *c.as_tuple())


def variety_lines(store: Store) -> list[str]:
    """Per type (all six, zeros included), per blueprint, then totals."""
    lines = ["# variety", _row(*VARIETY_COLUMNS)]
    for wt in WalletType:
        lines.append(_counts("type", wt.value, store.dedup_stats(wt)))
    names = sorted({r.classification.blueprint for r in store.addresses() if r.classification})
    for name in names:
        lines.append(_counts("blueprint", name, store.dedup_stats(name)))
    lines.append(
        _counts("total", "all_wallets", store.dedup_stats(lambda r: r.classification is not None))
    )
    lines.append(_counts("total", "all_contracts", store.dedup_stats()))
    return lines


def usage_lines(store: Store, bin_size: int = BIN_SIZE) -> list[str]:
    """Usage buckets of classified wallets per creation-block bin.

    One ``all`` row per bin followed by a row per wallet type present in it.
    Wallets without a creation block or a usage bucket are left out.
    """
    bins: dict[int, dict[str, Counter]] = {}
    for rec in store.addresses():
        if rec.classification is None or rec.block is None or rec.usage is None:
            continue
        per = bins.setdefault(rec.block // bin_size * bin_size, {})
        for scope in ("all", rec.classification.wallet_type.value):
            per.setdefault(scope, Counter())[rec.usage] += 1
    lines = ["# usage", _row(*USAGE_COLUMNS)]
    order = ["all"] + [wt.value for wt in WalletType]
    for start in sorted(bins):
        for scope in order:
            counts = bins[start].get(scope)
            if counts is not None:
                lines.append(_row(start, scope, *(counts[b] for b in UsageBucket)))
    return lines


def _stats_row(stage: str, s: ComponentStats) -> str:
    top = ",".join(str(n) for n in s.top_sizes(10)) or "-"
    return _row(stage, s.nodes, s.edges, s.count, s.largest, top)


def graph_lines(
    graph: CallGraph,
    wallets: Iterable[str] = (),
    token_holders: Iterable[str] = (),
) -> list[str]:
    """Component stats of the full graph, then with wallets removed, then
    additionally with token holders removed (singletons pruned each time)."""
    wallets = frozenset(wallets)
    holders = frozenset(token_holders) | wallets
    lines = ["# graph", _row(*GRAPH_COLUMNS), _stats_row("full", connected_components(graph))]
    no_wallets = remove_and_recompute(graph, wallets.__contains__)
    lines.append(_stats_row("without_wallets_unpruned", no_wallets.removed))
    lines.append(_stats_row("without_wallets", no_wallets.after))
    no_holders = remove_and_recompute(graph, holders.__contains__)
    lines.append(_stats_row("without_wallets_and_holders", no_holders.after))
    return lines


def factory_lines(profiles: Iterable) -> list[str]:
    lines = [_row("creator", "children", "skeletons", "factory")]
    for p in profiles:
        lines.append(_row(p.creator, p.children, p.distinct_skeletons, int(p.is_factory)))
    return lines


def classification_lines(results: Mapping[str, object]) -> list[str]:
    """``address  blueprint  type  evidence`` with ``-`` for no match."""
    lines = []
    for address in sorted(results):
        c = results[address]
        if c is None:
            lines.append(_row(address, "-", "-", "-"))
        else:
            lines.append(
                _row(address, c.blueprint, c.wallet_type.value, "trace" if c.by_trace else "signature")
            )
    return lines

"""Contract call graph and connected-component experiments."""

from __future__ import annotations

from collections import Counter
from collections.abc import Callable, Iterable
from dataclasses import dataclass

from .trace import CALL_KINDS, Message, Registry


@dataclass(frozen=True)
class CallGraph:
    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]]) -> CallGraph:
        """Graph over the given edges; nodes without edges never appear."""
        edges = frozenset(edges)
        return cls(frozenset(n for e in edges for n in e), edges)

    def without(self, predicate: Callable[[str], bool]) -> CallGraph:
        """Drop matching nodes and their edges; keeps newly isolated nodes."""
        drop = {n for n in self.nodes if predicate(n)}
        return CallGraph(
            self.nodes - drop,
            frozenset(e for e in self.edges if e[0] not in drop and e[1] not in drop),
        )

    def pruned(self) -> CallGraph:
        """Remove singletons, i.e. nodes no longer touched by any edge."""
        return CallGraph.from_edges(self.edges)


def build_call_graph(messages: Iterable[Message], registry: Registry) -> CallGraph:
    """Contracts as nodes, one edge per ordered caller/callee pair.

    Contracts only ever called by users (or not at all) have no edge and so
    are not part of the graph.
    """
    edges = set()
    for msg in messages:
        if msg.kind in CALL_KINDS and registry.is_contract(msg.sender) and registry.is_contract(msg.to):
            edges.add((msg.sender, msg.to))
    return CallGraph.from_edges(edges)


class UnionFind:
    def __init__(self, elements: Iterable[str]) -> None:
        self.parent = {e: e for e in elements}
        self.size = dict.fromkeys(self.parent, 1)

    def find(self, x: str) -> str:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


@dataclass(frozen=True)
class ComponentStats:
    count: int
    largest: int
    histogram: tuple[tuple[int, int], ...]  # (component size, how many), by size
    nodes: int
    edges: int

    def top_sizes(self, k: int = 10) -> list[int]:
        sizes = []
        for size, n in sorted(self.histogram, reverse=True):
            sizes.extend([size] * n)
            if len(sizes) >= k:
                break
        return sizes[:k]


def connected_components(g: CallGraph) -> ComponentStats:
    """Weakly connected components: edge direction is ignored."""
    uf = UnionFind(sorted(g.nodes))
    for a, b in g.edges:
        uf.union(a, b)
    sizes = Counter(uf.size[r] for r in {uf.find(n) for n in g.nodes})
    return ComponentStats(
        count=sum(sizes.values()),
        largest=max(sizes, default=0),
        histogram=tuple(sorted(sizes.items())),
        nodes=len(g.nodes),
        edges=len(g.edges),
    )


@dataclass(frozen=True)
class RemovalResult:
    before: ComponentStats
    removed: ComponentStats  # after dropping nodes, singletons still in place
    after: ComponentStats  # after singleton pruning


def remove_and_recompute(g: CallGraph, predicate: Callable[[str], bool]) -> RemovalResult:
    reduced = g.without(predicate)
    return RemovalResult(
        before=connected_components(g),
        removed=connected_components(reduced),
        after=connected_components(reduced.pruned()),
    )

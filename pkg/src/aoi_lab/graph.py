"""Static directed graphs over agents 0..D-1 and strong connectivity."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

Edge = tuple[int, int]


@dataclass(frozen=True)
class DirectedGraph:
    num_nodes: int
    edges: frozenset[Edge] = frozenset()

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError(f"num_nodes must be positive, got {self.num_nodes}")
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop ({i}, {j}) not allowed")
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ValueError(f"edge ({i}, {j}) out of range for {self.num_nodes} nodes")
        object.__setattr__(self, "edges", edges)

    def successors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, j in sorted(self.edges):
            out[i].append(j)
        return out

    def reversed(self) -> "DirectedGraph":
        return DirectedGraph(self.num_nodes, frozenset((j, i) for i, j in self.edges))


def _reachable(adj: list[list[int]], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def is_strongly_connected(g: DirectedGraph) -> bool:
    """Double BFS from node 0: forward on g, then on the reversed graph."""
    if g.num_nodes == 1:
        return True
    if len(_reachable(g.successors(), 0)) != g.num_nodes:
        return False
    return len(_reachable(g.reversed().successors(), 0)) == g.num_nodes


def union_graph(edge_sets: Iterable[Iterable[Edge]], num_nodes: int | None = None) -> DirectedGraph:
    """Union of several edge sets over a common node set.

    Items may be ``DirectedGraph`` instances or bare edge collections. When
    graphs are given their node counts must agree; bare edge sets take
    ``num_nodes`` (or the smallest count that covers all indices).
    """
    counts = set()
    edges: set[Edge] = set()
    for item in edge_sets:
        if isinstance(item, DirectedGraph):
            counts.add(item.num_nodes)
            edges.update(item.edges)
        else:
            edges.update((int(i), int(j)) for i, j in item)
    if num_nodes is not None:
        counts.add(num_nodes)
    if len(counts) > 1:
        raise ValueError(f"mismatched node counts: {sorted(counts)}")
    if counts:
        n = counts.pop()
    else:
        n = 1 + max((max(e) for e in edges), default=0)
    return DirectedGraph(n, frozenset(edges))

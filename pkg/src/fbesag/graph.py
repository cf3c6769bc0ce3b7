"""Adjacency graphs and sub-region partitions for areal domains."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field


class GraphParseError(ValueError):
    """Raised when a graph or partition file is malformed."""


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected first-order neighbourhood structure over small areas.

    Areas are indexed 0..n_areas-1.  Edges are stored as a frozenset of
    sorted (i, j) pairs; ``neighbors`` is the per-area adjacency list.
    """

    n_areas: int
    edges: frozenset[tuple[int, int]]
    neighbors: tuple[tuple[int, ...], ...] = field(repr=False)

    @staticmethod
    def from_edges(n_areas: int, edges) -> "AdjacencyGraph":
        if n_areas < 1:
            raise ValueError("n_areas must be positive")
        canon = set()
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop on area {i}")
            if not (0 <= i < n_areas and 0 <= j < n_areas):
                raise ValueError(f"edge ({i},{j}) out of range for {n_areas} areas")
            canon.add((min(i, j), max(i, j)))
        adj: list[list[int]] = [[] for _ in range(n_areas)]
        for i, j in canon:
            adj[i].append(j)
            adj[j].append(i)
        nbrs = tuple(tuple(sorted(a)) for a in adj)
        return AdjacencyGraph(n_areas, frozenset(canon), nbrs)

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.neighbors)


@dataclass(frozen=True)
class Partition:
    """Assignment of areas to sub-regions, with neighbour-count split.

    ``cross_counts[i][l]`` is the number of neighbours of area i lying in
    sub-region l; the counts over l always sum to the degree of i.
    """

    labels: tuple[int, ...]
    n_subregions: int
    cross_counts: tuple[dict[int, int], ...] = field(repr=False)
    label_names: tuple[str, ...] = ()


def parse_graph(text: str) -> AdjacencyGraph:
    """Parse the areal-adjacency text format.

    First non-comment line is the number of areas N; each following line is
    ``<area-id> <num-neighbors> <neighbor-id>...`` with 1-based ids.  Blank
    lines and '#' comments are ignored.  The edge set is symmetric-closed
    and deduplicated.
    """
    lines = text.splitlines()
    n_areas = None
    edges: set[tuple[int, int]] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if n_areas is None:
            if len(parts) != 1:
                raise GraphParseError(f"line {lineno}: expected single area count, got {raw!r}")
            try:
                n_areas = int(parts[0])
            except ValueError:
                raise GraphParseError(f"line {lineno}: bad area count {parts[0]!r}") from None
            if n_areas < 1:
                raise GraphParseError(f"line {lineno}: area count must be positive")
            continue
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise GraphParseError(f"line {lineno}: non-integer token in {raw!r}") from None
        if len(nums) < 2:
            raise GraphParseError(f"line {lineno}: expected '<id> <count> <neighbors...>'")
        area, count, nbrs = nums[0], nums[1], nums[2:]
        if len(nbrs) != count:
            raise GraphParseError(
                f"line {lineno}: declared {count} neighbors but listed {len(nbrs)}"
            )
        if not (1 <= area <= n_areas):
            raise GraphParseError(f"line {lineno}: area id {area} out of range 1..{n_areas}")
        for j in nbrs:
            if not (1 <= j <= n_areas):
                raise GraphParseError(f"line {lineno}: neighbor id {j} out of range 1..{n_areas}")
            if j == area:
                raise GraphParseError(f"line {lineno}: self-loop on area {area}")
            edges.add((min(area, j) - 1, max(area, j) - 1))
    if n_areas is None:
        raise GraphParseError("empty graph file")
    return AdjacencyGraph.from_edges(n_areas, edges)


def serialize_graph(graph: AdjacencyGraph) -> str:
    """Canonical text form of a graph (inverse of parse_graph)."""
    out = [str(graph.n_areas)]
    for i in range(graph.n_areas):
        nbrs = graph.neighbors[i]
        out.append(" ".join([str(i + 1), str(len(nbrs))] + [str(j + 1) for j in nbrs]))
    return "\n".join(out) + "\n"


def build_partition(graph: AdjacencyGraph, labels) -> Partition:
    """Build a Partition from per-area labels (any hashable values).

    Labels are normalized to dense 0..P-1 indices in first-appearance
    order.  Non-contiguous sub-regions only trigger a warning: the model's
    precision construction never requires contiguity.
    """
    labels = list(labels)
    if len(labels) != graph.n_areas:
        raise ValueError(f"got {len(labels)} labels for {graph.n_areas} areas")
    seen: dict = {}
    dense = []
    for lab in labels:
        if lab not in seen:
            seen[lab] = len(seen)
        dense.append(seen[lab])
    p = len(seen)
    cross: list[dict[int, int]] = []
    for i in range(graph.n_areas):
        counts: dict[int, int] = {}
        for j in graph.neighbors[i]:
            counts[dense[j]] = counts.get(dense[j], 0) + 1
        assert sum(counts.values()) == graph.degree(i)
        cross.append(counts)
    part = Partition(
        labels=tuple(dense),
        n_subregions=p,
        cross_counts=tuple(cross),
        label_names=tuple(str(k) for k in seen),
    )
    _warn_if_discontiguous(graph, part)
    return part


def _warn_if_discontiguous(graph: AdjacencyGraph, part: Partition) -> None:
    if part.n_subregions == 1:
        # the stationary case; contiguity is a sub-region notion only
        return
    for l in range(part.n_subregions):
        members = {i for i, lab in enumerate(part.labels) if lab == l}
        sub_edges = [(i, j) for (i, j) in graph.edges if i in members and j in members]
        sub = AdjacencyGraph.from_edges(graph.n_areas, sub_edges)
        comps = [c for c in connected_components(sub) if c & members]
        pieces = sum(1 for c in comps if c & members)
        if pieces > 1:
            warnings.warn(
                f"sub-region {l} is not contiguous ({pieces} pieces)", stacklevel=3
            )


def connected_components(graph: AdjacencyGraph) -> list[set[int]]:
    """Maximal connected sets of areas, by breadth-first search."""
    unseen = set(range(graph.n_areas))
    comps = []
    while unseen:
        start = min(unseen)
        comp = {start}
        frontier = [start]
        unseen.discard(start)
        while frontier:
            nxt = []
            for i in frontier:
                for j in graph.neighbors[i]:
                    if j in unseen:
                        unseen.discard(j)
                        comp.add(j)
                        nxt.append(j)
            frontier = nxt
        comps.append(comp)
    return comps


def grid_graph(rows: int, cols: int) -> AdjacencyGraph:
    """4-neighbour lattice with rows*cols areas, row-major indexing."""
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be positive")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return AdjacencyGraph.from_edges(rows * cols, edges)


def quadrant_partition(rows: int, cols: int, split_rows, split_cols) -> Partition:
    """Rectangular-block partition of a grid, blocks labeled row-major."""
    split_rows = sorted(split_rows)
    split_cols = sorted(split_cols)
    for s in split_rows:
        if not (0 < s < rows):
            raise ValueError(f"row split {s} outside (0, {rows})")
    for s in split_cols:
        if not (0 < s < cols):
            raise ValueError(f"col split {s} outside (0, {cols})")

    def band(x, splits):
        return sum(1 for s in splits if x >= s)

    ncb = len(split_cols) + 1
    labels = []
    for r in range(rows):
        for c in range(cols):
            labels.append(band(r, split_rows) * ncb + band(c, split_cols))
    return build_partition(grid_graph(rows, cols), labels)


def parse_partition_csv(text: str, graph: AdjacencyGraph) -> Partition:
    """Parse a partition CSV with header ``area,label`` and 1-based ids."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip().lower().replace(" ", "") != "area,label":
        raise GraphParseError("partition file must start with header 'area,label'")
    labels: dict[int, str] = {}
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in ln.split(",")]
        if len(parts) != 2:
            raise GraphParseError(f"line {lineno}: expected 'area,label'")
        try:
            area = int(parts[0])
        except ValueError:
            raise GraphParseError(f"line {lineno}: bad area id {parts[0]!r}") from None
        if not (1 <= area <= graph.n_areas):
            raise GraphParseError(f"line {lineno}: area id {area} out of range")
        if area in labels:
            raise GraphParseError(f"line {lineno}: duplicate area id {area}")
        labels[area] = parts[1]
    missing = [a for a in range(1, graph.n_areas + 1) if a not in labels]
    if missing:
        raise GraphParseError(f"partition file missing areas {missing[:5]}")
    return build_partition(graph, [labels[a] for a in range(1, graph.n_areas + 1)])

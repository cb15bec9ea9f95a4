"""Directed map graphs, map generators, the JSON map format and shortest paths.

Shortest paths run on integer-quantized weights.  Integer sums are exact, so
two paths tie only when their quantized costs are genuinely equal, and the
forward (from a root) and backward (to a root) searches always agree on
which path wins.  Among tied paths the lexicographically smallest edge-id
sequence is returned.
"""

from __future__ import annotations

import json
import math
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

TWO_PI = 2.0 * math.pi
EARTH_RADIUS_M = 6_371_000.0

# one quantum of edge weight; keeps path sums exact integers well below 2**53
WEIGHT_QUANTUM = 1e-9

Path = tuple[int, ...]


class MapFormatError(ValueError):
    """Map content could not be parsed."""


class MapValidationError(ValueError):
    """Map content parsed but violates a graph invariant."""


class EmptyMapError(ValueError):
    """A road extract produced no usable nodes or edges."""


class NegativeWeightError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class DirectedEdge:
    id: int
    source: int
    target: int
    length: float
    bearing: float  # radians clockwise from north, in [0, 2*pi)


def bearing_between(x0: float, y0: float, x1: float, y1: float) -> float:
    b = math.atan2(x1 - x0, y1 - y0) % TWO_PI
    return 0.0 if b >= TWO_PI else b


@dataclass(frozen=True)
class Trip:
    """A delivery cycle: ``outbound`` flies base -> dest, ``inbound`` flies back."""

    dest: int
    outbound: Path
    inbound: Path

    @property
    def edges(self) -> Path:
        return self.outbound + self.inbound


@dataclass(frozen=True, eq=True)
class Graph:
    nodes: tuple[Node, ...]
    edges: tuple[DirectedEdge, ...]
    base: int
    destinations: frozenset[int]
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        validate_graph(self)
        n, m = len(self.nodes), len(self.edges)
        c = self._cache
        c["sources"] = np.array([e.source for e in self.edges], dtype=np.int64)
        c["targets"] = np.array([e.target for e in self.edges], dtype=np.int64)
        c["lengths"] = np.array([e.length for e in self.edges], dtype=float)
        c["bearings"] = np.array([e.bearing for e in self.edges], dtype=float)
        xy = np.array([(v.x, v.y) for v in self.nodes], dtype=float).reshape(n, 2)
        c["xy"] = xy
        if m:
            c["midpoints"] = 0.5 * (xy[c["sources"]] + xy[c["targets"]])
        else:
            c["midpoints"] = np.zeros((0, 2))
        out_edges: list[list[int]] = [[] for _ in range(n)]
        in_edges: list[list[int]] = [[] for _ in range(n)]
        for e in self.edges:
            out_edges[e.source].append(e.id)
            in_edges[e.target].append(e.id)
        c["out_edges"] = tuple(tuple(x) for x in out_edges)
        c["in_edges"] = tuple(tuple(x) for x in in_edges)
        c["pair"] = {(e.source, e.target): e.id for e in self.edges}
        # CSR layouts of the forward and reversed graphs; weights are permuted in per query
        fwd = np.lexsort((c["targets"], c["sources"]))
        rev = np.lexsort((c["sources"], c["targets"]))
        c["fwd_perm"] = fwd
        c["fwd_indices"] = c["targets"][fwd].astype(np.int32)
        c["fwd_indptr"] = np.searchsorted(c["sources"][fwd], np.arange(n + 1)).astype(np.int32)
        c["rev_perm"] = rev
        c["rev_indices"] = c["sources"][rev].astype(np.int32)
        c["rev_indptr"] = np.searchsorted(c["targets"][rev], np.arange(n + 1)).astype(np.int32)
        c["sources_list"] = c["sources"].tolist()
        c["targets_list"] = c["targets"].tolist()

    # -- convenience accessors -------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def sources(self) -> np.ndarray:
        return self._cache["sources"]

    @property
    def targets(self) -> np.ndarray:
        return self._cache["targets"]

    @property
    def lengths(self) -> np.ndarray:
        return self._cache["lengths"]

    @property
    def bearings(self) -> np.ndarray:
        return self._cache["bearings"]

    @property
    def midpoints(self) -> np.ndarray:
        return self._cache["midpoints"]

    @property
    def xy(self) -> np.ndarray:
        return self._cache["xy"]

    def out_edges(self, v: int) -> tuple[int, ...]:
        return self._cache["out_edges"][v]

    def in_edges(self, v: int) -> tuple[int, ...]:
        return self._cache["in_edges"][v]

    def edge_between(self, u: int, v: int) -> int | None:
        return self._cache["pair"].get((u, v))

    def in_neighbors(self, v: int) -> list[int]:
        return sorted({self.edges[e].source for e in self.in_edges(v)})

    def out_neighbors(self, v: int) -> list[int]:
        return sorted({self.edges[e].target for e in self.out_edges(v)})

    def sorted_destinations(self) -> list[int]:
        return sorted(self.destinations)


def validate_graph(g: Graph) -> None:
    n = len(g.nodes)
    if n == 0:
        raise MapValidationError("graph has no nodes")
    for i, v in enumerate(g.nodes):
        if v.id != i:
            raise MapValidationError(f"node ids must be contiguous from 0 (got {v.id} at position {i})")
        if not (math.isfinite(v.x) and math.isfinite(v.y)):
            raise MapValidationError(f"node {i} has non-finite position")
    seen: set[tuple[int, int]] = set()
    for i, e in enumerate(g.edges):
        if e.id != i:
            raise MapValidationError(f"edge ids must be contiguous from 0 (got {e.id} at position {i})")
        if not (0 <= e.source < n and 0 <= e.target < n):
            raise MapValidationError(f"edge {i} references a missing node")
        if e.source == e.target:
            raise MapValidationError(f"edge {i} is a self-loop")
        if (e.source, e.target) in seen:
            raise MapValidationError(f"duplicate edge {e.source}->{e.target}")
        seen.add((e.source, e.target))
        if not (math.isfinite(e.length) and e.length > 0):
            raise MapValidationError(f"edge {i} has non-positive length")
        if not (0.0 <= e.bearing < TWO_PI):
            raise MapValidationError(f"edge {i} bearing out of range")
    if not (0 <= g.base < n):
        raise MapValidationError("missing base node")
    if g.base in g.destinations:
        raise MapValidationError("base cannot be a destination")
    for d in g.destinations:
        if not (0 <= d < n):
            raise MapValidationError(f"destination {d} is not a node")
    if _n_weak_components(n, ((e.source, e.target) for e in g.edges)) != 1:
        raise MapValidationError("graph is not connected")


def _components(n: int, pairs: Iterable[tuple[int, int]]) -> list[int]:
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return [find(a) for a in range(n)]


def _n_weak_components(n: int, pairs: Iterable[tuple[int, int]]) -> int:
    return len(set(_components(n, pairs)))


def build_graph(
    positions: Sequence[tuple[float, float]],
    pairs: Iterable[tuple[int, int]] | Iterable[tuple[int, int, float]],
    base: int,
    destinations: Iterable[int] | None = None,
) -> Graph:
    """Assemble a graph; edges get ids in (source, target) order.

    ``pairs`` items are ``(u, v)`` (length from geometry) or ``(u, v, length)``.
    ``destinations`` defaults to every node except the base.
    """
    nodes = tuple(Node(i, float(x), float(y)) for i, (x, y) in enumerate(positions))
    lengths: dict[tuple[int, int], float] = {}
    for p in pairs:
        u, v = int(p[0]), int(p[1])
        length = float(p[2]) if len(p) > 2 else math.hypot(nodes[v].x - nodes[u].x, nodes[v].y - nodes[u].y)
        if (u, v) in lengths:
            lengths[(u, v)] = min(lengths[(u, v)], length)
        else:
            lengths[(u, v)] = length
    edges = []
    for i, (u, v) in enumerate(sorted(lengths)):
        a, b = nodes[u], nodes[v]
        edges.append(DirectedEdge(i, u, v, lengths[(u, v)], bearing_between(a.x, a.y, b.x, b.y)))
    if destinations is None:
        destinations = [i for i in range(len(nodes)) if i != base]
    return Graph(nodes, tuple(edges), int(base), frozenset(int(d) for d in destinations))


def _nearest_node(xy: np.ndarray, cx: float, cy: float) -> int:
    d2 = (xy[:, 0] - cx) ** 2 + (xy[:, 1] - cy) ** 2
    return int(np.argmin(d2))  # first minimum -> lowest id on ties


# -- generators ------------------------------------------------------------------

def generate_random_map(n: int, width: float = 1000.0, height: float = 1000.0, k: int = 5, seed: int = 0) -> Graph:
    """Uniform random nodes, each linked both ways to its ``k`` nearest neighbours.

    If the k-nearest-neighbour graph falls apart, components are joined by the
    closest cross-component pair until it is connected.
    """
    if n < 1 or k < 1 or width <= 0 or height <= 0:
        raise ValueError("need n >= 1, k >= 1 and a positive area")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, width, n)
    ys = rng.uniform(0.0, height, n)
    xy = np.column_stack([xs, ys])
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    kk = min(k, n - 1)
    pairs: set[tuple[int, int]] = set()
    if kk > 0:
        order = np.argsort(d2, axis=1, kind="stable")[:, :kk]
        for i in range(n):
            for j in order[i].tolist():
                pairs.add((i, j))
                pairs.add((j, i))
    comp = _components(n, pairs)
    while len(set(comp)) > 1:
        root = comp[0]
        inside = np.array([c == root for c in comp])
        sub = d2[np.ix_(inside, ~inside)]
        a, b = np.unravel_index(int(np.argmin(sub)), sub.shape)
        i = int(np.flatnonzero(inside)[a])
        j = int(np.flatnonzero(~inside)[b])
        pairs.add((i, j))
        pairs.add((j, i))
        comp = _components(n, pairs)
    base = _nearest_node(xy, width / 2.0, height / 2.0)
    return build_graph(xy.tolist(), pairs, base)


def generate_grid_map(rows: int, cols: int, edge_len: float = 100.0) -> Graph:
    if rows < 1 or cols < 1 or edge_len <= 0:
        raise ValueError("need rows, cols >= 1 and a positive edge length")
    pos = [(c * edge_len, r * edge_len) for r in range(rows) for c in range(cols)]
    pairs = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                pairs += [(i, i + 1, edge_len), (i + 1, i, edge_len)]
            if r + 1 < rows:
                pairs += [(i, i + cols, edge_len), (i + cols, i, edge_len)]
    xy = np.array(pos, dtype=float)
    base = _nearest_node(xy, (cols - 1) * edge_len / 2.0, (rows - 1) * edge_len / 2.0)
    return build_graph(pos, pairs, base)


def import_road_network(
    xml: bytes | str,
    bbox: tuple[float, float, float, float] | None = None,
    highway_only: bool = False,
) -> Graph:
    """Build a graph from an OpenStreetMap-style XML extract.

    ``bbox`` is ``(min_lat, min_lon, max_lat, max_lon)``; when omitted the
    extent of the node coordinates is used.  Coordinates are projected to
    metres with an equirectangular projection about the box centre.  Every
    way segment becomes a pair of opposite directed edges, and only the
    largest weakly connected component is kept.
    """
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise MapFormatError(f"malformed road extract: {exc}") from exc

    coords: dict[str, tuple[float, float]] = {}
    ways: list[list[str]] = []
    try:
        for el in root:
            if el.tag == "node":
                coords[el.attrib["id"]] = (float(el.attrib["lat"]), float(el.attrib["lon"]))
            elif el.tag == "way":
                tags = {t.attrib.get("k"): t.attrib.get("v") for t in el if t.tag == "tag"}
                if highway_only and "highway" not in tags:
                    continue
                ways.append([nd.attrib["ref"] for nd in el if nd.tag == "nd"])
    except (KeyError, ValueError) as exc:
        raise MapFormatError(f"bad node or way element: {exc}") from exc
    if not coords:
        raise MapFormatError("road extract has no node elements")

    if bbox is None:
        lats = [c[0] for c in coords.values()]
        lons = [c[1] for c in coords.values()]
        bbox = (min(lats), min(lons), max(lats), max(lons))
    min_lat, min_lon, max_lat, max_lon = bbox
    lat0 = 0.5 * (min_lat + max_lat)
    lon0 = 0.5 * (min_lon + max_lon)
    kx = EARTH_RADIUS_M * math.cos(math.radians(lat0)) * math.pi / 180.0
    ky = EARTH_RADIUS_M * math.pi / 180.0

    inside = {
        k: ((lon - lon0) * kx, (lat - lat0) * ky)
        for k, (lat, lon) in coords.items()
        if min_lat <= lat <= max_lat and min_lon <= lon <= max_lon
    }
    segments: dict[tuple[str, str], float] = {}
    for refs in ways:
        for a, b in zip(refs, refs[1:]):
            if a == b or a not in inside or b not in inside:
                continue
            (xa, ya), (xb, yb) = inside[a], inside[b]
            length = math.hypot(xb - xa, yb - ya)
            if length <= 0.0:
                continue
            for key in ((a, b), (b, a)):
                if key not in segments or length < segments[key]:
                    segments[key] = length
    if not segments:
        raise EmptyMapError("no way segments inside the bounding box")

    def osm_key(k: str):
        return (0, int(k), "") if k.lstrip("-").isdigit() else (1, 0, k)

    used = sorted({k for pair in segments for k in pair}, key=osm_key)
    index = {k: i for i, k in enumerate(used)}
    comp = _components(len(used), ((index[a], index[b]) for a, b in segments))
    sizes: dict[int, int] = {}
    for c in comp:
        sizes[c] = sizes.get(c, 0) + 1
    best = max(sizes, key=lambda c: (sizes[c], -c))
    if len(sizes) > 1:
        dropped = len(used) - sizes[best]
        warnings.warn(
            f"road network has {len(sizes)} components; dropped {dropped} nodes outside the largest",
            RuntimeWarning,
            stacklevel=2,
        )
    keep = [k for k in used if comp[index[k]] == best]
    renum = {k: i for i, k in enumerate(keep)}
    pos = [inside[k] for k in keep]
    pairs = [(renum[a], renum[b], ln) for (a, b), ln in segments.items() if a in renum and b in renum]
    base = _nearest_node(np.array(pos, dtype=float), 0.0, 0.0)
    return build_graph(pos, pairs, base)


# -- JSON map format ---------------------------------------------------------------

def _fmt(x: float) -> str:
    s = format(float(x), ".9g")
    return "0" if s == "-0" else s


def dumps_map(g: Graph) -> str:
    lines = ["{", '"nodes": [']
    lines.append(",\n".join(f'{{"id": {v.id}, "x": {_fmt(v.x)}, "y": {_fmt(v.y)}}}' for v in g.nodes))
    lines.append("],")
    lines.append('"edges": [')
    lines.append(
        ",\n".join(
            f'{{"id": {e.id}, "from": {e.source}, "to": {e.target}, "length": {_fmt(e.length)}}}' for e in g.edges
        )
    )
    lines.append("],")
    lines.append(f'"base": {g.base},')
    lines.append(f'"destinations": [{", ".join(str(d) for d in sorted(g.destinations))}]')
    lines.append("}")
    return "\n".join(x for x in lines if x != "") + "\n"


def load_map(content: bytes | str) -> Graph:
    if isinstance(content, bytes):
        try:
            content = content.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MapFormatError("map file is not valid UTF-8") from exc
    try:
        doc = json.loads(content)
        raw_nodes = [(int(v["id"]), float(v["x"]), float(v["y"])) for v in doc["nodes"]]
        raw_edges = [(int(e["id"]), int(e["from"]), int(e["to"]), float(e["length"])) for e in doc["edges"]]
        raw_base = int(doc["base"])
        raw_dests = doc.get("destinations")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MapFormatError(f"malformed map file: {exc}") from exc

    raw_nodes.sort()
    node_map = {}
    for new, (old, _, _) in enumerate(raw_nodes):
        if old in node_map:
            raise MapValidationError(f"duplicate node id {old}")
        node_map[old] = new
    nodes = tuple(Node(node_map[old], x, y) for old, x, y in raw_nodes)

    raw_edges.sort()
    if len({e[0] for e in raw_edges}) != len(raw_edges):
        raise MapValidationError("duplicate edge id")
    edges = []
    for new, (_, u, v, length) in enumerate(raw_edges):
        if u not in node_map or v not in node_map:
            raise MapValidationError(f"edge {u}->{v} references a missing node")
        a, b = nodes[node_map[u]], nodes[node_map[v]]
        edges.append(DirectedEdge(new, a.id, b.id, length, bearing_between(a.x, a.y, b.x, b.y)))
    if raw_base not in node_map:
        raise MapValidationError("missing base node")
    base = node_map[raw_base]
    if raw_dests is None:
        dests = frozenset(i for i in range(len(nodes)) if i != base)
    else:
        try:
            dests = frozenset(node_map[int(d)] for d in raw_dests)
        except KeyError as exc:
            raise MapValidationError(f"destination {exc} is not a node") from exc
    return Graph(nodes, tuple(edges), base, dests)


def read_map_file(path) -> Graph:
    with open(path, "rb") as fh:
        return load_map(fh.read())


def write_map_file(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_map(g))


# -- shortest paths ------------------------------------------------------------------

def quantize_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.size and not np.all(np.isfinite(w)):
        raise NegativeWeightError("edge weights must be finite")
    if w.size and w.min() < 0:
        raise NegativeWeightError("edge weights must be nonnegative")
    quantum = WEIGHT_QUANTUM
    total = float(w.sum()) if w.size else 0.0
    if total / quantum > 2.0**51:
        quantum = total / 2.0**51
    # a zero weight becomes one quantum so every tight edge strictly decreases the distance
    return np.maximum(np.rint(w / quantum), 1.0)


def _as_array(g: Graph, weights) -> np.ndarray:
    if isinstance(weights, Mapping):
        w = np.zeros(g.n_edges)
        for k, v in weights.items():
            w[int(k)] = float(v)
        return w
    w = np.asarray(weights, dtype=float)
    if w.shape != (g.n_edges,):
        raise ValueError(f"expected {g.n_edges} edge weights, got shape {w.shape}")
    return w


def _distances(g: Graph, wq: np.ndarray, root: int, reverse: bool) -> np.ndarray:
    n = g.n_nodes
    c = g._cache
    if g.n_edges == 0:
        d = np.full(n, np.inf)
        d[root] = 0.0
        return d
    key = "rev" if reverse else "fwd"
    mat = c.get(key + "_mat")
    if mat is None:
        mat = c[key + "_mat"] = csr_matrix(
            (np.ones(g.n_edges), c[key + "_indices"], c[key + "_indptr"]), shape=(n, n)
        )
    # structure is fixed per graph; only the weights change
    mat.data = wq[c[key + "_perm"]]
    return dijkstra(mat, directed=True, indices=root)


class PathTree:
    """All lexicographically-least shortest paths from (``direction='from'``)
    or to (``direction='to'``) a root node.
    """

    def __init__(self, g: Graph, weights, root: int, direction: str = "from"):
        if direction not in ("from", "to"):
            raise ValueError("direction must be 'from' or 'to'")
        self.graph = g
        self.root = root
        self.direction = direction
        self.weights = _as_array(g, weights)
        wq = quantize_weights(self.weights)
        self._dist = _distances(g, wq, root, reverse=(direction == "to"))
        self._finite = np.isfinite(self._dist).tolist()
        src, dst = g.sources, g.targets
        if direction == "from":
            ds = self._dist[src]
            tight = np.isfinite(ds) & (ds + wq == self._dist[dst])
        else:
            dd = self._dist[dst]
            tight = np.isfinite(dd) & (dd + wq == self._dist[src])
        tight_ids = np.flatnonzero(tight)
        self._paths: dict[int, Path] = {root: ()}
        if direction == "to":
            nxt = np.full(g.n_nodes, g.n_edges, dtype=np.int64)
            np.minimum.at(nxt, src[tight_ids], tight_ids)
            self._next = nxt.tolist()
        else:
            cand: dict[int, list[int]] = {}
            for e, v in zip(tight_ids.tolist(), dst[tight_ids].tolist()):
                cand.setdefault(v, []).append(e)
            self._cand = cand

    def reachable(self, v: int) -> bool:
        return self._finite[v]

    def path(self, v: int) -> Path | None:
        """Path root->v ('from') or v->root ('to'); None if there is none."""
        if v in self._paths:
            return self._paths[v]
        if not self.reachable(v):
            return None
        tl, hd = self.graph._cache["sources_list"], self.graph._cache["targets_list"]
        if self.direction == "to":
            seq = []
            u = v
            while u not in self._paths:
                seq.append(u)
                u = hd[self._next[u]]
            tail = self._paths[u]
            for u in reversed(seq):
                e = self._next[u]
                tail = (e,) + tail
                self._paths[u] = tail
            return self._paths[v]
        # forward: collect every ancestor needed to compare tied candidates
        need = []
        stack = [v]
        seen = {v}
        while stack:
            u = stack.pop()
            need.append(u)
            for e in self._cand.get(u, ()):
                w = tl[e]
                if w not in self._paths and w not in seen:
                    seen.add(w)
                    stack.append(w)
        dist = self._dist
        need.sort(key=lambda u: dist[u])
        for u in need:
            best = None
            for e in self._cand[u]:
                p = self._paths[tl[e]] + (e,)
                if best is None or p < best:
                    best = p
            self._paths[u] = best
        return self._paths[v]


def shortest_path(g: Graph, weights, src: int, dst: int) -> Path | None:
    """Least-cost path src->dst (lexicographically least edge ids among ties)."""
    if src == dst:
        quantize_weights(_as_array(g, weights))  # still reject bad weights
        return ()
    return PathTree(g, weights, dst, direction="to").path(src)


def path_cost(weights, path: Sequence[int]) -> float:
    return math.fsum(map(weights.__getitem__, path))


def path_nodes(g: Graph, path: Sequence[int], start: int) -> list[int]:
    """Node sequence visited by ``path`` starting at ``start``; raises if not a walk."""
    nodes = [start]
    cur = start
    for e in path:
        edge = g.edges[e]
        if edge.source != cur:
            raise ValueError(f"edge {e} does not continue the walk at node {cur}")
        cur = edge.target
        nodes.append(cur)
    return nodes


def is_valid_trip(g: Graph, trip: Trip) -> bool:
    try:
        out = path_nodes(g, trip.outbound, g.base)
        back = path_nodes(g, trip.inbound, trip.dest)
    except (ValueError, IndexError):
        return False
    return out[-1] == trip.dest and back[-1] == g.base

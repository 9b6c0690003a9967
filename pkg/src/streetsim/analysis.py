"""Connection-graph analytics and street-percolation structures.

Covers the largest-cluster statistics of simulated connection graphs, the
velocity sweep that re-evaluates one recorded movement under rescaled
(horizon, connection-time) pairs, and the auxiliary long-street graphs used
to study when connections across streets are possible at all.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from heapq import heappop, heappush

from .engine import ConnectionGraph, derived_connection_graph, initialize, run
from .mobility import coords
from .streets import Street, StreetGraph, VoronoiCell
from .torus import min_image_delta

__all__ = [
    "UnionFind",
    "largest_cluster_fraction",
    "cluster_size_histogram",
    "connection_graph_wraps",
    "thinned_street_graph",
    "AuxGraph",
    "long_edge_percolation_graph",
    "aux_largest_component",
    "SweepRow",
    "SweepResult",
    "velocity_sweep",
    "write_sweep_csv",
    "CSV_COLUMNS",
]


class UnionFind:
    """Disjoint sets over arbitrary hashable ids with size tracking."""

    def __init__(self, items=()):
        self.parent: dict = {}
        self.size: dict = {}
        for x in items:
            self.add(x)

    def add(self, x) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def component_sizes(self) -> dict:
        out: dict = {}
        for x in self.parent:
            r = self.find(x)
            out[r] = out.get(r, 0) + 1
        return out


def largest_cluster_fraction(cg: ConnectionGraph) -> float:
    """Share of devices in the largest connected component."""
    if not cg.vertices:
        raise ValueError("connection graph has no vertices")
    uf = UnionFind(cg.vertices)
    for i, j in cg.edges:
        uf.union(i, j)
    return max(uf.component_sizes().values()) / len(cg.vertices)


def cluster_size_histogram(cg: ConnectionGraph) -> list[tuple[int, int]]:
    """Sorted (component size, count) pairs."""
    if not cg.vertices:
        return []
    uf = UnionFind(cg.vertices)
    for i, j in cg.edges:
        uf.union(i, j)
    counts: dict[int, int] = {}
    for s in uf.component_sizes().values():
        counts[s] = counts.get(s, 0) + 1
    return sorted(counts.items())


def connection_graph_wraps(cg: ConnectionGraph, devices_by_id, g: StreetGraph) -> bool:
    """Whether some connection cluster closes a loop around the torus.

    Finite-volume heuristic: devices are anchored at their home coordinates
    and each edge carries the minimal-image displacement between homes; a
    cycle whose displacements do not cancel wraps the torus.
    """
    if not cg.edges:
        return False
    anchors = {did: coords(devices_by_id[did].home, g) for did in cg.vertices}
    adj: dict[int, list[tuple[int, float, float]]] = {v: [] for v in cg.vertices}
    for i, j in cg.edges:
        dx, dy = min_image_delta(anchors[i], anchors[j], g.L)
        adj[i].append((j, dx, dy))
        adj[j].append((i, -dx, -dy))
    return _has_winding_cycle(cg.vertices, adj, g.L)


def _has_winding_cycle(vertices, adj, L: float) -> bool:
    """BFS potential assignment; an inconsistent non-tree edge means a wrap."""
    pot: dict = {}
    for start in vertices:
        if start in pot or not adj.get(start):
            continue
        pot[start] = (0.0, 0.0)
        dq = deque([start])
        while dq:
            u = dq.popleft()
            px, py = pot[u]
            for v, dx, dy in adj[u]:
                cand = (px + dx, py + dy)
                known = pot.get(v)
                if known is None:
                    pot[v] = cand
                    dq.append(v)
                elif abs(known[0] - cand[0]) > L or abs(known[1] - cand[1]) > L:
                    return True
    return False


# -- street thinning and the long-street graph ---------------------------------


def thinned_street_graph(g: StreetGraph, a: float) -> StreetGraph:
    """Subgraph of streets with length >= a and their endpoints.

    ``a = 0`` reproduces the input graph.  Device sets of the copy are empty;
    cells keep only their surviving boundary streets.
    """
    if a < 0:
        raise ValueError("length threshold must be non-negative")
    edges = {}
    for eid, e in g.edges.items():
        if e.length >= a:
            edges[eid] = Street(e.id, e.u, e.v, e.length, e.delta, e.cells, e.wrap_info)
    if a <= 0:
        vertices = dict(g.vertices)
    else:
        keep = {v for e in edges.values() for v in (e.u, e.v)}
        vertices = {vid: pos for vid, pos in g.vertices.items() if vid in keep}
    cells = {
        cid: VoronoiCell(cid, c.seed, [eid for eid in c.edge_ids if eid in edges])
        for cid, c in g.cells.items()
    }
    return StreetGraph(g.L, vertices, edges, cells)


@dataclass
class AuxGraph:
    """Long streets plus shortcut edges between nearby long-street endpoints.

    ``street_edges`` are the surviving long streets; ``aux_edges`` connect
    endpoint pairs whose shortest-path distance along the full street system
    is within the reach bound, annotated with the path displacement (used
    for torus-wrap detection).
    """

    vertices: tuple[int, ...]
    street_edges: dict[int, Street]
    aux_edges: dict[tuple[int, int], tuple[float, float]]
    L: float
    total_long_length: float


def long_edge_percolation_graph(g: StreetGraph, a: float, b: float) -> AuxGraph:
    """Auxiliary graph: streets of length >= a, endpoints linked within b.

    Distances are measured along the full street system with a truncated
    multi-source Dijkstra (radius b) from every long-street endpoint.
    """
    if a < 0 or b < 0:
        raise ValueError("thresholds must be non-negative")
    long_edges = {eid: e for eid, e in g.edges.items() if e.length >= a}
    endpoints = sorted({v for e in long_edges.values() for v in (e.u, e.v)})
    endpoint_set = set(endpoints)
    adj = g.adjacency()
    aux: dict[tuple[int, int], tuple[float, float]] = {}
    for src in endpoints:
        dist = {src: 0.0}
        disp = {src: (0.0, 0.0)}
        heap = [(0.0, src)]
        done = set()
        while heap:
            du, u = heappop(heap)
            if u in done:
                continue
            done.add(u)
            if u != src and u in endpoint_set:
                pair = (src, u) if src < u else (u, src)
                if pair not in aux:
                    dx, dy = disp[u]
                    aux[pair] = (dx, dy) if src < u else (-dx, -dy)
            for v, w, sid in adj[u]:
                nd = du + w
                if nd > b or v in done:
                    continue
                if v not in dist or nd < dist[v]:
                    dist[v] = nd
                    e = g.edges[sid]
                    ex, ey = e.delta
                    if u != e.u:
                        ex, ey = -ex, -ey
                    px, py = disp[u]
                    disp[v] = (px + ex, py + ey)
                    heappush(heap, (nd, v))
    street_edges = {
        eid: Street(e.id, e.u, e.v, e.length, e.delta, e.cells, e.wrap_info)
        for eid, e in long_edges.items()
    }
    total = sum(e.length for e in long_edges.values())
    return AuxGraph(tuple(endpoints), street_edges, aux, g.L, total)


def aux_largest_component(aux: AuxGraph) -> tuple[float, bool]:
    """(fraction of long-street length in the largest component, wraps flag).

    The wrap flag is true when any component contains a cycle with nonzero
    winding number around either torus axis.
    """
    if not aux.vertices:
        return 0.0, False
    uf = UnionFind(aux.vertices)
    adj: dict[int, list[tuple[int, float, float]]] = {v: [] for v in aux.vertices}
    for e in aux.street_edges.values():
        uf.union(e.u, e.v)
        dx, dy = e.delta
        adj[e.u].append((e.v, dx, dy))
        adj[e.v].append((e.u, -dx, -dy))
    for (u, v), (dx, dy) in aux.aux_edges.items():
        uf.union(u, v)
        adj[u].append((v, dx, dy))
        adj[v].append((u, -dx, -dy))
    mass: dict = {}
    for e in aux.street_edges.values():
        r = uf.find(e.u)
        mass[r] = mass.get(r, 0.0) + e.length
    fraction = max(mass.values()) / aux.total_long_length if aux.total_long_length > 0 else 0.0
    wraps = _has_winding_cycle(aux.vertices, adj, aux.L)
    return fraction, wraps


# -- velocity sweep ---------------------------------------------------------------


CSV_COLUMNS = [
    "seed",
    "scale_a",
    "velocity_mean_mps",
    "T_s",
    "rho_s",
    "r_m",
    "lambda_per_m",
    "n_devices",
    "largest_fraction",
    "wraps",
]


@dataclass(frozen=True)
class SweepRow:
    seed: int
    scale_a: float
    velocity_mean_mps: float
    T_s: float
    rho_s: float
    r_m: float
    lambda_per_m: float
    n_devices: int
    largest_fraction: float | None
    wraps: bool
    histogram: tuple[tuple[int, int], ...] = ()


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r.seed, r.scale_a, r.T_s))


def velocity_sweep(config) -> SweepResult:
    """Run the experiment of an :class:`~streetsim.config.ExperimentConfig`.

    Per seed the movement is simulated once, at the configured base velocity
    distribution, out to max(scale)*max(T) with contact-history recording.
    Each (scale a, horizon T) point is then the derived connection graph at
    (a*T, a*rho): scaling all velocities by a is equivalent to stretching
    horizon and connection time by a on the same movement.  Rows for scale a
    equal a direct simulation with velocities scaled by a.
    """
    from .config import build_seed_state  # local import; config wires the pieces

    result = SweepResult()
    for seed in config.seeds:
        result.rows.extend(_sweep_one_seed(config, seed, build_seed_state))
    result.sort()
    return result


def _sweep_one_seed(config, seed: int, build_seed_state) -> list[SweepRow]:
    g, devices, dist = build_seed_state(config, seed)
    lam_per_m = config.lambda_per_km / 1000.0
    scales = config.sweep.values if config.sweep is not None else [1.0]
    horizons = config.T_s
    rows: list[SweepRow] = []
    if not devices:
        for a in scales:
            for T in horizons:
                rows.append(SweepRow(
                    seed=seed, scale_a=a, velocity_mean_mps=dist.scaled(a).mean(),
                    T_s=T, rho_s=config.rho_s, r_m=config.r_m,
                    lambda_per_m=lam_per_m, n_devices=0,
                    largest_fraction=None, wraps=False,
                ))
        return rows
    base_T = max(scales) * max(horizons)
    state = initialize(g, devices, r=config.r_m, rho=config.rho_s, T=base_T,
                       record_history=True)
    run(state)
    by_id = state.devices
    for a in scales:
        for T in horizons:
            cg = derived_connection_graph(state, a * T, a * config.rho_s)
            rows.append(SweepRow(
                seed=seed, scale_a=a, velocity_mean_mps=dist.scaled(a).mean(),
                T_s=T, rho_s=config.rho_s, r_m=config.r_m,
                lambda_per_m=lam_per_m, n_devices=len(devices),
                largest_fraction=largest_cluster_fraction(cg),
                wraps=connection_graph_wraps(cg, by_id, g),
                histogram=tuple(cluster_size_histogram(cg)),
            ))
    return rows


def write_sweep_csv(result: SweepResult, path) -> None:
    """Mandatory-header CSV in deterministic (seed, scale, T) order."""
    result.sort()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in result.rows:
            writer.writerow([
                r.seed,
                repr(float(r.scale_a)),
                repr(float(r.velocity_mean_mps)),
                repr(float(r.T_s)),
                repr(float(r.rho_s)),
                repr(float(r.r_m)),
                repr(float(r.lambda_per_m)),
                r.n_devices,
                "" if r.largest_fraction is None else repr(float(r.largest_fraction)),
                "true" if r.wraps else "false",
            ])

"""Topometric pose graph for the taught path network.

Vertices are spaced every 30 cm or 10 degrees of motion; edges carry the
relative transform accumulated from odometry, so compounding edges along a
chain reproduces the odometry rollout exactly. The graph is globally only
topological: any metric question goes through `metric_embedding`.

Persistence is an append-only record log (`TEACHGRAPH v1`): a crash loses at
most the trailing record. Re-emitting a `V` record for an existing id updates
its flags; that is how stale marking stays append-only.

    V <id> <stamp> <flags>            flags: '-' or any of b(ookmark) s(tale) m(submap)
    E <from> <to> <x y z qx qy qz qw> <kind>   kind: teach | branch | merge
    W <id> <name>                     named waypoint
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from .geometry import Pose3, compose, invert

SPACING_TRANSLATION = 0.30
SPACING_ROTATION = math.radians(10.0)


class TeachGraphError(ValueError):
    pass


@dataclass
class Vertex:
    id: int
    stamp: float
    submap_ref: Optional[int] = None
    stale: bool = False
    bookmark: bool = False


@dataclass
class Edge:
    from_id: int
    to_id: int
    transform: Pose3
    kind: str = "teach"  # teach | branch | merge

    def travel_direction(self) -> int:
        """+1 if the rover moved forward when this edge was taught, else -1."""
        return 1 if self.transform.t[0] >= 0.0 else -1


@dataclass
class TeachGraph:
    vertices: dict[int, Vertex] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    active_head: Optional[int] = None
    submaps: dict[int, object] = field(default_factory=dict)
    waypoints: dict[str, int] = field(default_factory=dict)
    _next_id: int = 0
    _next_edge_kind: str = "teach"
    _adj: dict[int, list[tuple[int, int]]] = field(default_factory=dict)  # id -> [(nbr, edge idx)]
    _log: Optional[TextIO] = None

    # -- construction ------------------------------------------------------

    def start_teach(self, stamp: float = 0.0) -> Vertex:
        """Create the root vertex (or resume from the existing head)."""
        if not self.vertices:
            return self._add_vertex(stamp, bookmark=False)
        if self.active_head is None:
            raise TeachGraphError("graph has vertices but no active head; branch first")
        return self.vertices[self.active_head]

    def _add_vertex(self, stamp: float, bookmark: bool,
                    delta: Optional[Pose3] = None, submap=None) -> Vertex:
        v = Vertex(self._next_id, stamp, bookmark=bookmark)
        self._next_id += 1
        self.vertices[v.id] = v
        self._adj.setdefault(v.id, [])
        if delta is not None:
            if self.active_head is None:
                raise TeachGraphError("no active head to connect from")
            self._add_edge(Edge(self.active_head, v.id, delta, self._next_edge_kind))
            self._next_edge_kind = "teach"
        self.active_head = v.id
        if submap is not None:
            self.submaps[v.id] = submap
            v.submap_ref = v.id
        self._emit_vertex(v)
        return v

    def _add_edge(self, edge: Edge) -> None:
        if edge.from_id not in self.vertices or edge.to_id not in self.vertices:
            raise TeachGraphError("edge references a missing vertex")
        idx = len(self.edges)
        self.edges.append(edge)
        self._adj.setdefault(edge.from_id, []).append((edge.to_id, idx))
        self._adj.setdefault(edge.to_id, []).append((edge.from_id, idx))
        self._emit_edge(edge)

    def record_pose(self, delta_since_head: Pose3, submap=None,
                    stamp: float = 0.0) -> Optional[Vertex]:
        """Create a vertex iff the accumulated motion crossed 30 cm or 10 deg."""
        if self.active_head is None:
            raise TeachGraphError("teaching is not active")
        trans = float(np.linalg.norm(delta_since_head.t))
        rot = delta_since_head.rotation_angle()
        if trans < SPACING_TRANSLATION and rot < SPACING_ROTATION:
            return None
        return self._add_vertex(stamp, bookmark=False, delta=delta_since_head, submap=submap)

    def bookmark(self, pose_delta_since_head: Pose3, stamp: float = 0.0,
                 submap=None) -> Vertex:
        """Force a vertex at the exact current location, bypassing spacing."""
        if self.active_head is None:
            raise TeachGraphError("teaching is not active")
        return self._add_vertex(stamp, bookmark=True, delta=pose_delta_since_head,
                                submap=submap)

    def branch(self, at: int) -> None:
        """Reset the head to an earlier vertex; the next chain forks from there."""
        v = self.vertices.get(at)
        if v is None:
            raise TeachGraphError(f"no vertex {at}")
        if v.stale:
            raise TeachGraphError(f"cannot branch from stale vertex {at}")
        self.active_head = at
        self._next_edge_kind = "branch"

    def merge(self, onto: int, transform: Optional[Pose3] = None) -> None:
        """Close the network: an edge from the head onto an existing vertex."""
        v = self.vertices.get(onto)
        if v is None:
            raise TeachGraphError(f"no vertex {onto}")
        if v.stale:
            raise TeachGraphError(f"cannot merge onto stale vertex {onto}")
        if self.active_head is None:
            raise TeachGraphError("teaching is not active")
        self._add_edge(Edge(self.active_head, onto, transform or Pose3.identity(), "merge"))

    def set_waypoint(self, name: str, vertex_id: int) -> None:
        if vertex_id not in self.vertices:
            raise TeachGraphError(f"no vertex {vertex_id}")
        self.waypoints[name] = vertex_id
        if self._log is not None:
            self._log.write(f"W {vertex_id} {name}\n")
            self._log.flush()

    def list_waypoints(self) -> dict[str, int]:
        """Waypoints on live branches only; stale ones never appear."""
        return {n: i for n, i in self.waypoints.items() if not self.vertices[i].stale}

    # -- stale handling ----------------------------------------------------

    def root_id(self) -> int:
        if not self.vertices:
            raise TeachGraphError("empty graph")
        return min(self.vertices)

    def _reachable(self, start: int, blocked: Optional[int] = None,
                   live_only: bool = False) -> set[int]:
        seen: set[int] = set()
        if start == blocked:
            return seen
        if live_only and self.vertices[start].stale:
            return seen
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            for nbr, _ in self._adj.get(u, []):
                if nbr in seen or nbr == blocked:
                    continue
                if live_only and self.vertices[nbr].stale:
                    continue
                seen.add(nbr)
                stack.append(nbr)
        return seen

    def mark_stale(self, branch_root: int) -> list[int]:
        """Flag the branch hanging off `branch_root` stale.

        The stale set is the branch root plus every vertex whose only paths to
        the graph root pass through it. Rejected when a vertex outside the set
        would lose its all-live path to the root (e.g. its alternate route was
        already stale).
        """
        if branch_root not in self.vertices:
            raise TeachGraphError(f"no vertex {branch_root}")
        root = self.root_id()
        if branch_root == root:
            raise TeachGraphError("cannot mark the root branch stale")
        if self.vertices[branch_root].stale:
            return []
        reachable_without = self._reachable(root, blocked=branch_root)
        stale_set = {branch_root} | (set(self.vertices) - reachable_without)

        # trial: would any live vertex outside the set be disconnected?
        for vid in stale_set:
            self.vertices[vid].stale = True
        live_ok = self._reachable(root, live_only=True)
        broken = [
            v.id for v in self.vertices.values()
            if not v.stale and v.id not in live_ok
        ]
        if broken:
            for vid in stale_set:
                self.vertices[vid].stale = False
            raise TeachGraphError(
                f"marking {branch_root} stale would disconnect live vertices {sorted(broken)}"
            )
        for vid in sorted(stale_set):
            self._emit_vertex(self.vertices[vid])
        if self.active_head in stale_set:
            self.active_head = None
        return sorted(stale_set)

    # -- routing -----------------------------------------------------------

    def plan_route(self, from_id: int, to_id: int) -> Optional[list[int]]:
        """Shortest live route by metric edge length, either travel direction.

        Returns the ordered vertex list, or None when no live route exists.
        """
        for vid in (from_id, to_id):
            v = self.vertices.get(vid)
            if v is None:
                raise TeachGraphError(f"no vertex {vid}")
            if v.stale:
                raise TeachGraphError(f"vertex {vid} is stale")
        if from_id == to_id:
            return [from_id]
        dist = {from_id: 0.0}
        prev: dict[int, int] = {}
        heap = [(0.0, from_id)]
        while heap:
            d, u = heapq.heappop(heap)
            if u == to_id:
                break
            if d > dist.get(u, math.inf):
                continue
            for nbr, ei in self._adj.get(u, []):
                if self.vertices[nbr].stale:
                    continue
                nd = d + float(np.linalg.norm(self.edges[ei].transform.t))
                if nd < dist.get(nbr, math.inf) - 1e-15:
                    dist[nbr] = nd
                    prev[nbr] = u
                    heapq.heappush(heap, (nd, nbr))
        if to_id not in dist:
            return None
        route = [to_id]
        while route[-1] != from_id:
            route.append(prev[route[-1]])
        return route[::-1]

    def nearest_vertex(self, xy: np.ndarray, embedding: dict[int, Pose3],
                       live_only: bool = True) -> int:
        best, best_d = -1, math.inf
        for vid in sorted(self.vertices):
            if live_only and self.vertices[vid].stale:
                continue
            d = float(np.linalg.norm(embedding[vid].t[:2] - xy))
            if d < best_d:
                best, best_d = vid, d
        return best

    # -- persistence -------------------------------------------------------

    def attach_log(self, fp: TextIO, write_existing: bool = True) -> None:
        """Journal every subsequent record to `fp` (append-only)."""
        self._log = fp
        if write_existing:
            fp.write("TEACHGRAPH v1\n")
            for vid in sorted(self.vertices):
                self._emit_vertex(self.vertices[vid])
            for e in self.edges:
                self._emit_edge(e)
            for name, vid in self.waypoints.items():
                fp.write(f"W {vid} {name}\n")
            fp.flush()

    def _emit_vertex(self, v: Vertex) -> None:
        if self._log is None:
            return
        flags = ""
        if v.bookmark:
            flags += "b"
        if v.stale:
            flags += "s"
        if v.submap_ref is not None:
            flags += "m"
        self._log.write(f"V {v.id} {v.stamp:.9g} {flags or '-'}\n")
        self._log.flush()

    def _emit_edge(self, e: Edge) -> None:
        if self._log is None:
            return
        t = e.transform.t
        q = e.transform.q
        nums = " ".join(f"{x:.17g}" for x in (*t, *q))
        self._log.write(f"E {e.from_id} {e.to_id} {nums} {e.kind}\n")
        self._log.flush()


def save_graph(graph: TeachGraph, fp: TextIO) -> None:
    old = graph._log
    graph.attach_log(fp, write_existing=True)
    graph._log = old


def load_graph(fp: TextIO) -> TeachGraph:
    header = fp.readline().strip()
    if header != "TEACHGRAPH v1":
        raise TeachGraphError(f"unsupported graph file header: {header!r}")
    g = TeachGraph()
    for line_no, raw in enumerate(fp, start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        try:
            if toks[0] == "V":
                vid = int(toks[1])
                stamp = float(toks[2])
                flags = toks[3]
                v = g.vertices.get(vid)
                if v is None:
                    v = Vertex(vid, stamp)
                    g.vertices[vid] = v
                    g._adj.setdefault(vid, [])
                    g._next_id = max(g._next_id, vid + 1)
                v.stamp = stamp
                v.bookmark = "b" in flags
                v.stale = "s" in flags
                v.submap_ref = vid if "m" in flags else None
                g.active_head = vid if not v.stale else g.active_head
            elif toks[0] == "E":
                a, b = int(toks[1]), int(toks[2])
                vals = [float(x) for x in toks[3:10]]
                kind = toks[10]
                edge = Edge(a, b, Pose3(t=np.array(vals[:3]), q=np.array(vals[3:7])), kind)
                idx = len(g.edges)
                g.edges.append(edge)
                g._adj.setdefault(a, []).append((b, idx))
                g._adj.setdefault(b, []).append((a, idx))
            elif toks[0] == "W":
                g.waypoints[toks[2]] = int(toks[1])
            else:
                raise ValueError(f"unknown record {toks[0]!r}")
        except (IndexError, ValueError) as exc:
            raise TeachGraphError(f"graph file line {line_no}: {exc}") from exc
    return g


def metric_embedding(graph: TeachGraph, root: Optional[int] = None) -> dict[int, Pose3]:
    """Compound edge transforms outward from the root (BFS over the network)."""
    if not graph.vertices:
        return {}
    root = graph.root_id() if root is None else root
    poses = {root: Pose3.identity()}
    queue = [root]
    while queue:
        u = queue.pop(0)
        for nbr, ei in graph._adj.get(u, []):
            if nbr in poses:
                continue
            e = graph.edges[ei]
            t = e.transform if e.from_id == u else invert(e.transform)
            poses[nbr] = compose(poses[u], t)
            queue.append(nbr)
    return poses

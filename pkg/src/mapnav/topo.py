"""Incrementally maintained topological map over environment viewpoints.

Node identity comes from the environment; the map only ever grows.  A
single synthetic stop node (zero feature, no position) is kept at all times
to represent the stop action.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidNodeError, UnreachableError
from .geometry import Pose, PointCloud

STOP_NODE = "<stop>"


class NodeKind(Enum):
    VISITED = "visited"
    CURRENT = "current"
    UNEXPLORED = "unexplored"
    STOP = "stop"


@dataclass
class TopoNode:
    id: str
    kind: NodeKind
    position: np.ndarray | None
    feature: np.ndarray | None
    last_visit_step: int = 0
    obs_count: int = 0
    index: int = 0
    pc_cache: tuple[PointCloud, Pose] | None = None


class TopoMap:
    """Graph of visited / current / unexplored nodes with weighted edges."""

    def __init__(self):
        self.nodes: dict[str, TopoNode] = {}
        self._adj: dict[str, dict[str, float]] = {}
        self.candidate_order: list[str] = []
        self._current_id: str | None = None
        stop = TopoNode(STOP_NODE, NodeKind.STOP, None, None, index=0)
        self.nodes[STOP_NODE] = stop

    # -- basic access -------------------------------------------------

    def node(self, node_id: str) -> TopoNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise InvalidNodeError(f"node {node_id!r} not in map") from None

    def current_node(self) -> TopoNode:
        if self._current_id is None:
            raise InvalidNodeError("map has no current node yet")
        return self.nodes[self._current_id]

    def neighbors(self, node_id: str) -> list[TopoNode]:
        return [self.nodes[n] for n in self._adj.get(node_id, {})]

    def edge_distance(self, a: str, b: str) -> float:
        try:
            return self._adj[a][b]
        except KeyError:
            raise InvalidNodeError(f"no edge {a!r} -- {b!r}") from None

    def edges(self):
        """Each undirected edge once, as (a, b, distance)."""
        seen = set()
        out = []
        for a, nbrs in self._adj.items():
            for b, d in nbrs.items():
                if (b, a) not in seen:
                    seen.add((a, b))
                    out.append((a, b, d))
        return out

    def _ensure(self, node_id: str, position) -> TopoNode:
        node = self.nodes.get(node_id)
        if node is None:
            node = TopoNode(node_id, NodeKind.UNEXPLORED,
                            np.asarray(position, dtype=np.float64), None,
                            index=len(self.nodes))
            self.nodes[node_id] = node
            self._adj[node_id] = {}
        return node

    # -- incremental update --------------------------------------------

    def update(self, step: int, current_id: str, position, agent_pose: Pose,
               pano_embeddings: np.ndarray, candidates, cloud: PointCloud):
        """Record one panorama at ``current_id``.

        candidates are the adjacent navigable nodes as (id, position,
        view_index) where view_index picks the panorama view facing them.
        The current node takes the mean panorama embedding and caches the
        egocentric cloud with the agent pose; unexplored candidates keep a
        running mean over every view embedding that has observed them, while
        previously visited candidates keep their panorama feature.
        """
        pano_embeddings = np.asarray(pano_embeddings, dtype=np.float64)
        if self._current_id is not None and self._current_id != current_id:
            self.nodes[self._current_id].kind = NodeKind.VISITED

        node = self._ensure(current_id, position)
        node.kind = NodeKind.CURRENT
        node.feature = pano_embeddings.mean(axis=0)
        node.last_visit_step = step
        node.pc_cache = (cloud, agent_pose)
        self._current_id = current_id

        for cand_id, cand_pos, view_index in candidates:
            cand = self._ensure(cand_id, cand_pos)
            if cand.kind is NodeKind.UNEXPLORED:
                emb = pano_embeddings[view_index]
                if cand.feature is None:
                    cand.feature = emb.copy()
                    cand.obs_count = 1
                else:
                    cand.obs_count += 1
                    cand.feature += (emb - cand.feature) / cand.obs_count
            if cand_id not in self.candidate_order:
                self.candidate_order.append(cand_id)
            dist = float(np.linalg.norm(np.asarray(cand_pos, dtype=np.float64)
                                        - node.position))
            self._adj[current_id][cand_id] = dist
            self._adj[cand_id][current_id] = dist

    # -- queries --------------------------------------------------------

    def global_action_space(self) -> list[str]:
        """Stop first, then every node ever observed as a candidate, minus
        the current node, in first-observation order."""
        return [STOP_NODE] + [n for n in self.candidate_order
                              if n != self._current_id]

    def _visited_ids(self) -> set[str]:
        return {n.id for n in self.nodes.values()
                if n.kind in (NodeKind.VISITED, NodeKind.CURRENT)}

    def hop_distance(self, i: str, j: str) -> int:
        """Unweighted hop count restricted to visited/current nodes (BFS)."""
        allowed = self._visited_ids()
        for nid in (i, j):
            if nid not in allowed:
                raise InvalidNodeError(f"{nid!r} is not a visited or current node")
        if i == j:
            return 0
        frontier = deque([(i, 0)])
        seen = {i}
        while frontier:
            nid, hops = frontier.popleft()
            for nbr in self._adj.get(nid, {}):
                if nbr in seen or nbr not in allowed:
                    continue
                if nbr == j:
                    return hops + 1
                seen.add(nbr)
                frontier.append((nbr, hops + 1))
        raise UnreachableError(f"{i!r} and {j!r} are not connected")

    def spatial_affinity(self, order: list[str]) -> np.ndarray:
        """Pairwise Euclidean distance matrix; stop rows/columns are zero."""
        n = len(order)
        out = np.zeros((n, n))
        positions = []
        for nid in order:
            node = self.node(nid)
            positions.append(None if node.position is None else node.position)
        for a in range(n):
            if positions[a] is None:
                continue
            for b in range(a + 1, n):
                if positions[b] is None:
                    continue
                d = float(np.linalg.norm(positions[a] - positions[b]))
                out[a, b] = out[b, a] = d
        return out

    def shortest_path(self, frm: str, to: str) -> list[str]:
        """Metric-shortest node sequence from ``frm`` to ``to`` (inclusive).

        Traversal is restricted to visited/current nodes plus the endpoints;
        equal-cost choices prefer the next node with the smaller insertion
        index.
        """
        self.node(frm)
        self.node(to)
        if frm == to:
            return [frm]
        allowed = self._visited_ids() | {frm, to}

        dist = {to: 0.0}
        heap = [(0.0, self.nodes[to].index, to)]
        done = set()
        while heap:
            d, _, nid = heapq.heappop(heap)
            if nid in done:
                continue
            done.add(nid)
            for nbr, w in self._adj.get(nid, {}).items():
                if nbr not in allowed:
                    continue
                nd = d + w
                if nd < dist.get(nbr, np.inf) - 1e-12:
                    dist[nbr] = nd
                    heapq.heappush(heap, (nd, self.nodes[nbr].index, nbr))
        if frm not in dist:
            raise UnreachableError(f"{to!r} unreachable from {frm!r}")

        path = [frm]
        node = frm
        while node != to:
            best = None
            for nbr, w in sorted(self._adj[node].items(),
                                 key=lambda kv: self.nodes[kv[0]].index):
                if nbr not in dist:
                    continue
                cost = w + dist[nbr]
                if best is None or cost < best[0] - 1e-12:
                    best = (cost, nbr)
            node = best[1]
            path.append(node)
        return path

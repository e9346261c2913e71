"""Topology-guided metric map construction.

The egocentric grid at the current node is rebuilt from the union of the
point-cloud caches of every visited node within a hop budget, aligned into
the current frame and splatted once (pooling runs over the raw union, not
over per-node maps).
"""

from __future__ import annotations

from .errors import CacheMissError
from .geometry import PointCloud, transform_pointcloud
from .metric import MapSpec, MetricMap, splat
from .topo import NodeKind, TopoMap


def nodes_within_hops(topo: TopoMap, current: str, kappa: int) -> list[str]:
    """Visited/current node ids with hop_distance(current, j) <= kappa,
    in breadth-first discovery order starting at the current node."""
    allowed = {n.id for n in topo.nodes.values()
               if n.kind in (NodeKind.VISITED, NodeKind.CURRENT)}
    out = [current]
    seen = {current}
    frontier = [current]
    for _ in range(kappa):
        nxt = []
        for nid in frontier:
            for nbr in topo.neighbors(nid):
                if nbr.id in seen or nbr.id not in allowed:
                    continue
                seen.add(nbr.id)
                nxt.append(nbr.id)
                out.append(nbr.id)
        if not nxt:
            break
        frontier = nxt
    return out


def build_metric_map(topo: TopoMap, current: str, kappa: int,
                     spec: MapSpec) -> MetricMap:
    """Union the kappa-hop caches in the current egocentric frame and splat."""
    cur_node = topo.node(current)
    if cur_node.pc_cache is None:
        raise CacheMissError(f"current node {current!r} has no cached cloud")
    _, cur_pose = cur_node.pc_cache
    to_current = cur_pose.inverse()

    clouds = []
    for nid in nodes_within_hops(topo, current, kappa):
        node = topo.node(nid)
        if node.pc_cache is None:
            raise CacheMissError(f"node {nid!r} within {kappa} hops has no cache")
        cloud, pose = node.pc_cache
        if nid == current:
            clouds.append(cloud)
        else:
            clouds.append(transform_pointcloud(cloud, to_current.compose(pose)))
    return splat(PointCloud.concatenate(clouds), spec)

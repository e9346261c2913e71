"""Assembles encoder input arrays from the topological and metric maps.

Everything returned here is a plain float64/int64 array: map contents enter
the encoders as fixed inputs, not as tape nodes, so gradients stop at the
map boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .metric import MapSpec, MetricMap, polar_embedding_grid
from .topo import STOP_NODE, NodeKind, TopoMap

REL_DISTANCE_SCALE = 10.0


def node_order(topo: TopoMap) -> list[str]:
    """Stop first, then every real node in insertion order."""
    return [STOP_NODE] + [nid for nid in topo.nodes if nid != STOP_NODE]


def node_inputs(topo: TopoMap, agent_pose) -> tuple[list[str], tuple]:
    """Encoder inputs for the node sequence.

    Returns (order, (features, locations, steps, affinity)); locations are
    [sin h, cos h, dist/10] relative to the agent pose, the stop node is all
    zeros, and steps carry the latest visit step (0 when unexplored).
    """
    order = node_order(topo)
    current = topo.current_node()
    dim = current.feature.shape[0]
    agent_heading = agent_pose.heading
    agent_xy = current.position[:2]

    features = np.zeros((len(order), dim))
    locations = np.zeros((len(order), 3))
    steps = np.zeros(len(order), dtype=np.int64)
    for i, nid in enumerate(order):
        node = topo.nodes[nid]
        if node.kind is NodeKind.STOP:
            continue
        if node.feature is not None:
            features[i] = node.feature
        delta = node.position[:2] - agent_xy
        dist = float(np.hypot(delta[0], delta[1]))
        heading = math.atan2(delta[1], delta[0]) - agent_heading if dist > 1e-12 else 0.0
        locations[i] = [math.sin(heading), math.cos(heading),
                        dist / REL_DISTANCE_SCALE]
        if node.kind in (NodeKind.VISITED, NodeKind.CURRENT):
            steps[i] = node.last_visit_step
    affinity = topo.spatial_affinity(order)
    return order, (features, locations, steps, affinity)


@lru_cache(maxsize=8)
def _polar_flat(spec: MapSpec) -> np.ndarray:
    return polar_embedding_grid(spec).reshape(-1, 3)


def cell_inputs(metric_map: MetricMap) -> tuple:
    """Encoder inputs for the flattened (row-major) cell sequence."""
    spec = metric_map.spec
    cu, cv = spec.center
    return (metric_map.features.reshape(-1, metric_map.feature_dim),
            _polar_flat(spec),
            metric_map.navigable.reshape(-1).astype(np.float64),
            metric_map.mask_grid().reshape(-1).astype(np.float64),
            cu * spec.v + cv)


@dataclass(frozen=True)
class ActionEntry:
    node_id: str
    node_index: int            # row in the encoded node sequence
    cell_index: int | None     # flat cell index when in the local action space


def action_entries(topo: TopoMap, order: list[str],
                   metric_map: MetricMap) -> list[ActionEntry]:
    """Global action space rows aligned with the encoded sequences.

    Stop is entry 0.  Actions projected into the metric map by the local
    action space carry their flat cell index; when several nodes share a
    cell they share the cell index (and hence its fused score contribution).
    """
    index_of = {nid: i for i, nid in enumerate(order)}
    spec = metric_map.spec
    cell_of = {}
    for (u, v), ids in metric_map.cell_to_nodes.items():
        for nid in ids:
            cell_of.setdefault(nid, u * spec.v + v)
    entries = []
    for nid in topo.global_action_space():
        entries.append(ActionEntry(nid, index_of[nid], cell_of.get(nid)))
    return entries

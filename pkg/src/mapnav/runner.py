"""Per-episode machinery: observing nodes, growing the maps, moving.

One EpisodeState owns one topological map and the agent pose.  Panorama
encoding runs without gradients here; map contents are inputs to the
trainable encoders, not part of the tape.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .env import CAMERA_HEIGHT, World
from .features import action_entries, cell_inputs, node_inputs
from .geometry import Pose, transform_pointcloud
from .metric import MapSpec, local_action_space
from .tmu import build_metric_map
from .topo import TopoMap


class EpisodeState:
    """Agent-side episode bookkeeping over a fixed world."""

    def __init__(self, world: World, model, spec: MapSpec, kappa: int):
        self.world = world
        self.model = model
        self.spec = spec
        self.kappa = kappa
        self.topo = TopoMap()
        self.step = 0
        self.heading = 0.0
        self.trajectory: list[str] = []
        self.agent_pose: Pose | None = None

    @property
    def current_id(self) -> str:
        return self.trajectory[-1]

    def _pano_embeddings(self, obs) -> np.ndarray:
        if self.model is None:
            return obs.view_features
        with ag.no_grad():
            return self.model.encode_pano(obs.view_features, obs.angles).data

    def arrive(self, node_id: str):
        """Observe a panorama at ``node_id`` and fold it into the maps."""
        pos = self.world.node_position(node_id)
        if not self.trajectory or self.trajectory[-1] != node_id:
            self.trajectory.append(node_id)
        self.step += 1
        pose = Pose.from_yaw(self.heading,
                             (pos[0], pos[1], pos[2] + CAMERA_HEIGHT))
        self.agent_pose = pose
        obs = self.world.observe(node_id)
        ego_cloud = transform_pointcloud(self.world.node_cloud(node_id),
                                         pose.inverse())
        self.topo.update(self.step, node_id, pos, pose,
                         self._pano_embeddings(obs),
                         self.world.candidates(node_id), ego_cloud)

    def move_to(self, target_id: str) -> list[str]:
        """Execute the map-shortest path to an actionable node.

        Intermediate nodes are traversed (and logged in the trajectory)
        without new decisions or observations; heading tracks each hop.
        """
        path = self.topo.shortest_path(self.current_id, target_id)
        for prev, nxt in zip(path, path[1:]):
            a = self.world.node_position(prev)
            b = self.world.node_position(nxt)
            self.heading = math.atan2(b[1] - a[1], b[0] - a[0])
            self.trajectory.append(nxt)
        return path

    def build_step(self):
        """Metric map, node/cell encoder inputs, and action entries."""
        mmap = build_metric_map(self.topo, self.current_id, self.kappa, self.spec)
        local_action_space(self.topo, self.agent_pose, mmap)
        order, nodes = node_inputs(self.topo, self.agent_pose)
        cells = cell_inputs(mmap)
        actions = action_entries(self.topo, order, mmap)
        return mmap, nodes, cells, actions


def replay_prefix(world: World, model, episode, length: int,
                  spec: MapSpec, kappa: int) -> EpisodeState:
    """Walk the first ``length`` expert nodes, observing each in order."""
    if not (1 <= length <= len(episode.expert_path)):
        raise ValueError("prefix length outside the expert path")
    state = EpisodeState(world, model, spec, kappa)
    state.arrive(episode.expert_path[0])
    for nxt in episode.expert_path[1:length]:
        state.move_to(nxt)
        state.arrive(nxt)
    return state

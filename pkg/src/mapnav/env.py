"""Procedurally generated indoor worlds and episodes.

A world is a grid of axis-aligned rectangular rooms joined by doorways.
Navigation nodes form a jittered mesh inside each room, with one edge per
doorway between adjacent rooms.  Observations are panoramic: K fixed world
headings, each with an angular feature/depth/semantics grid produced by
ray-casting against the room boxes (rays continue through doorway openings
into neighboring rooms and stop at walls, floor, ceiling, or max range).

Everything is a deterministic function of the world seed; observation calls
are cached and safe to share across threads.
"""

from __future__ import annotations

import heapq
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError, InvalidNodeError, UnreachableError
from .geometry import CameraIntrinsics, Pose, PointCloud, lift
from .seeding import substream

CLASS_NAMES = ["kitchen", "bedroom", "bathroom", "office",
               "hallway", "lounge", "library", "storage"]
TEMPLATE_WORDS = ["go", "to", "the", "then", "and", "stop", "walk",
                  "through", "room", "turn", "left", "right", "straight"]
MASK_TOKEN = "<mask>"

ROOM_HEIGHT = 2.6
CAMERA_HEIGHT = 1.5
DOOR_HEIGHT = 2.0
DOOR_WIDTH = 1.2
NODE_MARGIN = 0.8

_SIGNATURE_SEED = 51966  # class signatures are shared across all worlds


@dataclass(frozen=True)
class WorldParams:
    n_rooms: int = 4
    nodes_per_room: int = 4
    obs_dim: int = 32
    num_classes: int = 8
    num_views: int = 12
    obs_grid: int = 14
    hfov: float = 2.0 * math.pi / 12
    vfov: float = math.pi / 3
    max_range: float = 10.0
    room_size: float = 4.0

    def __post_init__(self):
        if self.n_rooms < 2:
            raise GenerationError("need at least 2 rooms")
        if not (1 <= self.num_classes <= 64):
            raise GenerationError("num_classes must be in [1, 64]")
        if self.nodes_per_room < 1 or self.num_views < 1:
            raise GenerationError("need at least one node per room and one view")


@dataclass
class Room:
    id: int
    class_id: int
    x0: float
    y0: float
    x1: float
    y1: float
    doors: list = field(default_factory=list)  # (wall, along_center, width, other_room)


@dataclass
class Observation:
    view_features: np.ndarray   # (K, obs_dim)
    grid_features: np.ndarray   # (K, H, W, obs_dim)
    depths: np.ndarray          # (K, H, W) range along ray, meters
    semantics: np.ndarray       # (K, H, W) class ids
    poses: list                 # K camera poses (world frame)
    angles: np.ndarray          # (K, 2) heading/elevation per view


@dataclass
class Episode:
    start: str
    target: str
    expert_path: list[str]
    instruction: list[int]
    instruction_text: str
    kind: str
    seed: int
    success_radius: float = 3.0


def class_signatures(num_classes: int, obs_dim: int) -> np.ndarray:
    """Unit feature signature per semantic class, identical in every world."""
    out = np.empty((num_classes, obs_dim))
    for c in range(num_classes):
        vec = substream(_SIGNATURE_SEED, "class-sig", c).normal(size=obs_dim)
        out[c] = vec / np.linalg.norm(vec)
    return out


def class_name(c: int) -> str:
    return CLASS_NAMES[c] if c < len(CLASS_NAMES) else f"class{c}"


def build_vocab(num_classes: int) -> list[str]:
    return [MASK_TOKEN] + TEMPLATE_WORDS + [class_name(c) for c in range(num_classes)]


class World:
    """Connectivity graph plus geometry; immutable after generation."""

    def __init__(self, seed: int, params: WorldParams, rooms, node_positions,
                 node_rooms, adjacency):
        self.seed = seed
        self.params = params
        self.rooms = rooms
        self._positions = node_positions       # id -> (3,) float64, z = 0
        self._node_rooms = node_rooms          # id -> room id
        self._adj = adjacency                  # id -> {neighbor: distance}
        self.vocab = build_vocab(params.num_classes)
        self._word_ids = {w: i for i, w in enumerate(self.vocab)}
        self.signatures = class_signatures(params.num_classes, params.obs_dim)
        self._dir_sigs = np.stack([
            substream(_SIGNATURE_SEED, "dir-sig", k).normal(size=params.obs_dim)
            for k in range(params.num_views)])
        self.intrinsics = CameraIntrinsics(params.obs_grid, params.obs_grid,
                                           params.hfov, params.vfov)
        self._obs_cache: dict[str, Observation] = {}
        self._cloud_cache: dict[str, PointCloud] = {}
        self._dist_cache: dict[str, dict[str, float]] = {}
        self._prev_cache: dict[str, dict[str, str]] = {}
        self._lock = threading.Lock()

    # -- graph ----------------------------------------------------------

    @property
    def node_ids(self) -> list[str]:
        return list(self._positions)

    def node_position(self, node_id: str) -> np.ndarray:
        try:
            return self._positions[node_id]
        except KeyError:
            raise InvalidNodeError(f"unknown node {node_id!r}") from None

    def node_room(self, node_id: str) -> Room:
        return self.rooms[self._node_rooms[node_id]]

    def neighbors(self, node_id: str) -> dict[str, float]:
        self.node_position(node_id)
        return self._adj[node_id]

    def candidates(self, node_id: str):
        """Adjacent navigable nodes as (id, position, facing view index)."""
        pos = self.node_position(node_id)
        step = 2.0 * math.pi / self.params.num_views
        out = []
        for nbr in self._adj[node_id]:
            delta = self._positions[nbr] - pos
            heading = math.atan2(delta[1], delta[0]) % (2.0 * math.pi)
            out.append((nbr, self._positions[nbr],
                        int(round(heading / step)) % self.params.num_views))
        return out

    def _distances_from(self, source: str) -> dict[str, float]:
        with self._lock:
            cached = self._dist_cache.get(source)
            if cached is not None:
                return cached
        dist = {source: 0.0}
        prev: dict[str, str] = {}
        heap = [(0.0, source)]
        while heap:
            d, nid = heapq.heappop(heap)
            if d > dist.get(nid, np.inf):
                continue
            for nbr, w in self._adj[nid].items():
                nd = d + w
                if nd < dist.get(nbr, np.inf) - 1e-12:
                    dist[nbr] = nd
                    prev[nbr] = nid
                    heapq.heappush(heap, (nd, nbr))
        with self._lock:
            self._dist_cache[source] = dist
            self._prev_cache[source] = prev
        return dist

    def graph_distance(self, a: str, b: str) -> float:
        self.node_position(a)
        self.node_position(b)
        dist = self._distances_from(a)
        if b not in dist:
            raise UnreachableError(f"{b!r} unreachable from {a!r}")
        return dist[b]

    def shortest_path_nodes(self, a: str, b: str) -> list[str]:
        self.graph_distance(a, b)
        prev = self._prev_cache[a]
        path = [b]
        while path[-1] != a:
            path.append(prev[path[-1]])
        return path[::-1]

    def tokenize(self, text: str) -> list[int]:
        return [self._word_ids[w] for w in text.split()]

    @property
    def mask_id(self) -> int:
        return self._word_ids[MASK_TOKEN]

    # -- observation ------------------------------------------------------

    def _raycast(self, room_id: int, origin: np.ndarray, direction: np.ndarray):
        """Range along the ray and terminal room class, following doorways."""
        max_range = self.params.max_range
        ox, oy, oz = origin
        dx, dy, dz = direction
        total = 0.0
        room = self.rooms[room_id]
        for _ in range(16):
            tx = np.inf
            wall_x = None
            if dx > 1e-12:
                tx, wall_x = (room.x1 - ox) / dx, "x+"
            elif dx < -1e-12:
                tx, wall_x = (room.x0 - ox) / dx, "x-"
            ty = np.inf
            wall_y = None
            if dy > 1e-12:
                ty, wall_y = (room.y1 - oy) / dy, "y+"
            elif dy < -1e-12:
                ty, wall_y = (room.y0 - oy) / dy, "y-"
            tv = np.inf
            if dz > 1e-12:
                tv = (ROOM_HEIGHT - oz) / dz
            elif dz < -1e-12:
                tv = (0.0 - oz) / dz
            t_wall = min(tx, ty)
            if total + min(t_wall, tv) >= max_range:
                return max_range, room.class_id
            if tv <= t_wall:
                return total + tv, room.class_id
            wall = wall_x if tx <= ty else wall_y
            hx, hy, hz = ox + t_wall * dx, oy + t_wall * dy, oz + t_wall * dz
            along = hy if wall in ("x+", "x-") else hx
            nxt = None
            for dwall, center, width, other in room.doors:
                if dwall == wall and abs(along - center) <= width / 2 and hz <= DOOR_HEIGHT:
                    nxt = other
                    break
            if nxt is None:
                return total + t_wall, room.class_id
            total += t_wall
            ox, oy, oz = hx + 1e-9 * dx, hy + 1e-9 * dy, hz + 1e-9 * dz
            room = self.rooms[nxt]
        return total, room.class_id

    def observe(self, node_id: str) -> Observation:
        with self._lock:
            cached = self._obs_cache.get(node_id)
        if cached is not None:
            return cached

        p = self.params
        pos = self.node_position(node_id)
        room_id = self._node_rooms[node_id]
        origin = np.array([pos[0], pos[1], CAMERA_HEIGHT])
        rays_cam = self.intrinsics.ray_directions()
        h, w = p.obs_grid, p.obs_grid

        depths = np.empty((p.num_views, h, w))
        sems = np.empty((p.num_views, h, w), dtype=np.int64)
        grid_feats = np.empty((p.num_views, h, w, p.obs_dim))
        view_feats = np.empty((p.num_views, p.obs_dim))
        poses = []
        angles = np.zeros((p.num_views, 2))
        for k in range(p.num_views):
            heading = 2.0 * math.pi * k / p.num_views
            angles[k, 0] = heading
            pose = Pose.from_yaw(heading, origin)
            poses.append(pose)
            dirs = rays_cam @ pose.rotation.T
            for r in range(h):
                for c in range(w):
                    depths[k, r, c], sems[k, r, c] = self._raycast(
                        room_id, origin, dirs[r, c])
            rng = substream(self.seed, "obs", node_id, k)
            noise = rng.normal(size=(h, w, p.obs_dim))
            grid_feats[k] = self.signatures[sems[k]] + 0.1 * noise
            view_feats[k] = (grid_feats[k].mean(axis=(0, 1))
                             + 0.15 * self._dir_sigs[k]
                             + 0.05 * rng.normal(size=p.obs_dim))

        obs = Observation(view_feats, grid_feats, depths, sems, poses, angles)
        with self._lock:
            self._obs_cache[node_id] = obs
        return obs

    def node_cloud(self, node_id: str) -> PointCloud:
        """World-frame cloud of all K lifted views at a node (cached)."""
        with self._lock:
            cached = self._cloud_cache.get(node_id)
        if cached is not None:
            return cached
        obs = self.observe(node_id)
        clouds = [lift(obs.grid_features[k], obs.depths[k], self.intrinsics,
                       obs.poses[k], obs.semantics[k])
                  for k in range(self.params.num_views)]
        cloud = PointCloud.concatenate(clouds)
        with self._lock:
            self._cloud_cache[node_id] = cloud
        return cloud


def generate_world(seed: int, params: WorldParams | None = None, **overrides) -> World:
    """Deterministic world from a seed: rooms on a grid, doorways between
    orthogonal neighbors, a jittered node mesh inside each room."""
    if params is None:
        params = WorldParams(**overrides)
    rng = substream(seed, "world")

    n = params.n_rooms
    cols = int(math.ceil(math.sqrt(n)))
    size = params.room_size
    rooms: list[Room] = []
    grid_pos = {}
    for i in range(n):
        gx, gy = i % cols, i // cols
        rooms.append(Room(i, 0, gx * size, gy * size, (gx + 1) * size, (gy + 1) * size))
        grid_pos[(gx, gy)] = i
    classes = list(rng.permutation(params.num_classes))
    for i, room in enumerate(rooms):
        room.class_id = int(classes[i % params.num_classes])

    for (gx, gy), i in grid_pos.items():
        j = grid_pos.get((gx + 1, gy))
        if j is not None:
            cy = rooms[i].y0 + size / 2
            rooms[i].doors.append(("x+", cy, DOOR_WIDTH, j))
            rooms[j].doors.append(("x-", cy, DOOR_WIDTH, i))
        j = grid_pos.get((gx, gy + 1))
        if j is not None:
            cx = rooms[i].x0 + size / 2
            rooms[i].doors.append(("y+", cx, DOOR_WIDTH, j))
            rooms[j].doors.append(("y-", cx, DOOR_WIDTH, i))

    positions: dict[str, np.ndarray] = {}
    node_rooms: dict[str, int] = {}
    adjacency: dict[str, dict[str, float]] = {}
    room_nodes: list[list[str]] = []
    for room in rooms:
        k = params.nodes_per_room
        side = int(math.ceil(math.sqrt(k)))
        xs = np.linspace(room.x0 + NODE_MARGIN, room.x1 - NODE_MARGIN, side)
        ys = np.linspace(room.y0 + NODE_MARGIN, room.y1 - NODE_MARGIN, side)
        jitter_scale = min(0.3, (xs[1] - xs[0]) / 4 if side > 1 else 0.3)
        ids = []
        for idx in range(k):
            nid = f"r{room.id}n{idx}"
            gx, gy = idx % side, idx // side
            jitter = rng.uniform(-jitter_scale, jitter_scale, size=2)
            positions[nid] = np.array([xs[gx] + jitter[0], ys[gy] + jitter[1], 0.0])
            node_rooms[nid] = room.id
            adjacency[nid] = {}
            ids.append(nid)
        room_nodes.append(ids)

    def connect(a: str, b: str):
        d = float(np.linalg.norm(positions[a] - positions[b]))
        adjacency[a][b] = d
        adjacency[b][a] = d

    mesh_degree = 4  # leaves headroom for doorway edges under the degree-6 bound
    for ids in room_nodes:
        for nid in ids:
            others = sorted((np.linalg.norm(positions[nid] - positions[o]), o)
                            for o in ids if o != nid)
            for _, o in others[:2]:
                if len(adjacency[nid]) < mesh_degree and len(adjacency[o]) < mesh_degree:
                    connect(nid, o)
        for a, b in zip(ids, ids[1:]):  # guarantee the room mesh is connected
            if b not in adjacency[a] and len(ids) > 1:
                connect(a, b)

    def door_anchor(ids, door):
        open_ids = [nid for nid in ids if len(adjacency[nid]) < 6] or ids
        return min(open_ids, key=lambda nid: np.linalg.norm(positions[nid] - door))

    for room in rooms:
        for wall, center, _, other in room.doors:
            if other < room.id:
                continue
            if wall == "x+":
                door = np.array([room.x1, center, 0.0])
            else:
                door = np.array([center, room.y1, 0.0])
            connect(door_anchor(room_nodes[room.id], door),
                    door_anchor(room_nodes[other], door))

    world = World(seed, params, rooms, positions, node_rooms, adjacency)
    _check_world(world)
    return world


def _check_world(world: World):
    ids = world.node_ids
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nbr in world.neighbors(stack.pop()):
            if nbr not in seen:
                seen.add(nbr)
                stack.append(nbr)
    if len(seen) != len(ids):
        raise GenerationError("generated world graph is not connected")
    for nid in ids:
        nbrs = world.neighbors(nid)
        if len(nbrs) > 6:
            raise GenerationError(f"node {nid} exceeds the degree bound")
        for dist in nbrs.values():
            if not (0.5 <= dist <= 5.0):
                raise GenerationError(f"edge at {nid} has length {dist:.2f}")


def _instruction(world: World, path: list[str], rng) -> tuple[str, list[int]]:
    """Template instruction naming the room classes along the expert path."""
    room_seq = []
    for nid in path:
        rid = world.node_room(nid).id
        if not room_seq or room_seq[-1] != rid:
            room_seq.append(rid)
    names = [class_name(world.rooms[rid].class_id) for rid in room_seq[1:]]

    start, after = world.node_position(path[0]), None
    for nid in path[1:]:
        if not np.allclose(world.node_position(nid), start):
            after = world.node_position(nid)
            break
    words = []
    if after is not None:
        angle = math.atan2(after[1] - start[1], after[0] - start[0])
        if angle > math.pi / 4:
            words += ["turn", "left", "then"]
        elif angle < -math.pi / 4:
            words += ["turn", "right", "then"]
        else:
            words += ["go", "straight", "then"]
    if not names:
        words += ["stop"]
    else:
        for name in names[:-1]:
            words += ["walk", "through", "the", name, "room", "then"]
        words += ["go", "to", "the", names[-1], "room", "and", "stop"]
    text = " ".join(words)
    return text, world.tokenize(text)


def generate_episode(world: World, seed: int, kind: str = "goal") -> Episode:
    """Sample start/target in different rooms with an expert path.

    goal: the expert path is the metric shortest path.  fidelity: the expert
    path detours through 1-2 seeded waypoints, so it is at least as long as
    the shortest path.
    """
    if kind not in ("goal", "fidelity"):
        raise ValueError(f"unknown episode kind {kind!r}")
    rng = substream(world.seed, "episode", seed, kind)
    ids = world.node_ids
    for _ in range(64):
        start, target = (ids[i] for i in rng.choice(len(ids), size=2, replace=False))
        if world.node_room(start).id != world.node_room(target).id:
            break
    else:
        raise GenerationError("could not sample start/target in distinct rooms")

    if kind == "goal":
        path = world.shortest_path_nodes(start, target)
    else:
        n_way = int(rng.integers(1, 3))
        stops = [start]
        for _ in range(n_way):
            w = ids[int(rng.integers(len(ids)))]
            if w not in (stops[-1], target):
                stops.append(w)
        stops.append(target)
        path = [start]
        for a, b in zip(stops, stops[1:]):
            path.extend(world.shortest_path_nodes(a, b)[1:])

    text, tokens = _instruction(world, path, rng)
    return Episode(start=start, target=target, expert_path=path,
                   instruction=tokens, instruction_text=text,
                   kind=kind, seed=seed)

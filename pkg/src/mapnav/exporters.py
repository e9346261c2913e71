"""Serialization: binary containers, text exports, and JSON documents.

Binary container layout (all integers and floats little-endian):

    magic   8 bytes  b"MAPNAV\\x00\\x01"
    kind    u16      1 point cloud | 2 metric map | 3 checkpoint
    payload          kind-specific, described next to each writer

All file writes are atomic: content goes to a temp file in the target
directory which is then renamed over the destination.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict

import numpy as np

from .encoders import EncoderConfig, NavModel
from .env import Episode, Room, World, WorldParams
from .errors import ValidationError
from .geometry import PointCloud
from .metric import MapSpec, MetricMap
from .topo import TopoMap

MAGIC = b"MAPNAV\x00\x01"
KIND_POINTCLOUD = 1
KIND_METRIC_MAP = 2
KIND_CHECKPOINT = 3


def write_atomic(path: str, data) -> None:
    """Write bytes or text via temp-file + rename so readers never see
    a truncated artifact."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-mapnav-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(kind: int) -> bytes:
    return MAGIC + struct.pack("<H", kind)


def read_kind(path: str) -> int:
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC) + 2)
    if len(head) < len(MAGIC) + 2 or head[:len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: not a mapnav binary container")
    return struct.unpack("<H", head[len(MAGIC):])[0]


def _pack_array(a: np.ndarray, dtype: str) -> bytes:
    a = np.asarray(a)
    # note: ascontiguousarray would promote 0-d scalars to 1-d
    return (struct.pack("<B", a.ndim)
            + struct.pack(f"<{a.ndim}I", *a.shape)
            + a.astype(dtype, order="C").tobytes())


def _unpack_array(buf: memoryview, offset: int, dtype: str):
    ndim = struct.unpack_from("<B", buf, offset)[0]
    offset += 1
    shape = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    offset += arr.nbytes
    return arr.reshape(shape).copy(), offset


# -- point clouds -----------------------------------------------------------
# payload: positions f64 (n,3) | features f64 (n,d) | semantics u64 (n,)


def save_pointcloud(pc: PointCloud, path: str) -> None:
    body = (_pack_array(pc.positions, "<f8")
            + _pack_array(pc.features, "<f8")
            + _pack_array(pc.semantics, "<u8"))
    write_atomic(path, _header(KIND_POINTCLOUD) + body)


def load_pointcloud(path: str) -> PointCloud:
    if read_kind(path) != KIND_POINTCLOUD:
        raise ValidationError(f"{path}: not a point-cloud container")
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    off = len(MAGIC) + 2
    positions, off = _unpack_array(buf, off, "<f8")
    features, off = _unpack_array(buf, off, "<f8")
    semantics, off = _unpack_array(buf, off, "<u8")
    return PointCloud(positions, features, semantics)


# -- metric maps -------------------------------------------------------------
# payload: spec json | features f64 | counts i64 | observed u8 | semantics u64
#          | navigable u8 | masked u8 | cell_to_nodes json


def _pack_json(obj) -> bytes:
    raw = json.dumps(obj).encode()
    return struct.pack("<I", len(raw)) + raw


def _unpack_json(buf: memoryview, offset: int):
    n = struct.unpack_from("<I", buf, offset)[0]
    offset += 4
    obj = json.loads(bytes(buf[offset:offset + n]).decode())
    return obj, offset + n


def save_metric_map(m: MetricMap, path: str) -> None:
    spec = asdict(m.spec)
    assoc = {f"{u},{v}": ids for (u, v), ids in m.cell_to_nodes.items()}
    body = (_pack_json(spec)
            + _pack_array(m.features, "<f8")
            + _pack_array(m.counts, "<i8")
            + _pack_array(m.observed.astype(np.uint8), "<u1")
            + _pack_array(m.semantics, "<u8")
            + _pack_array(m.navigable.astype(np.uint8), "<u1")
            + _pack_array(m.mask_grid().astype(np.uint8), "<u1")
            + _pack_json(assoc))
    write_atomic(path, _header(KIND_METRIC_MAP) + body)


def load_metric_map(path: str) -> MetricMap:
    if read_kind(path) != KIND_METRIC_MAP:
        raise ValidationError(f"{path}: not a metric-map container")
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    off = len(MAGIC) + 2
    spec_dict, off = _unpack_json(buf, off)
    features, off = _unpack_array(buf, off, "<f8")
    counts, off = _unpack_array(buf, off, "<i8")
    observed, off = _unpack_array(buf, off, "<u1")
    semantics, off = _unpack_array(buf, off, "<u8")
    navigable, off = _unpack_array(buf, off, "<u1")
    masked, off = _unpack_array(buf, off, "<u1")
    assoc, off = _unpack_json(buf, off)
    cell_to_nodes = {tuple(int(x) for x in key.split(",")): ids
                     for key, ids in assoc.items()}
    return MetricMap(spec=MapSpec(**spec_dict), features=features,
                     counts=counts, observed=observed.astype(bool),
                     semantics=semantics, navigable=navigable.astype(bool),
                     cell_to_nodes=cell_to_nodes, masked=masked.astype(bool))


# -- checkpoints --------------------------------------------------------------
# payload: config json | u32 tensor count | per tensor:
#          u16 name length, name utf-8, array f64


def save_checkpoint(model: NavModel, path: str) -> None:
    parts = [_header(KIND_CHECKPOINT), _pack_json(asdict(model.cfg))]
    named = model.named_parameters()
    parts.append(struct.pack("<I", len(named)))
    for name, p in named.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(_pack_array(p.data, "<f8"))
    write_atomic(path, b"".join(parts))


def read_checkpoint_config(path: str) -> EncoderConfig:
    if read_kind(path) != KIND_CHECKPOINT:
        raise ValidationError(f"{path}: not a checkpoint container")
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    cfg_dict, _ = _unpack_json(buf, len(MAGIC) + 2)
    return EncoderConfig(**cfg_dict)


def load_checkpoint(model: NavModel, path: str) -> None:
    """Load named tensors into an existing model, validating every shape."""
    if read_kind(path) != KIND_CHECKPOINT:
        raise ValidationError(f"{path}: not a checkpoint container")
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    off = len(MAGIC) + 2
    cfg_dict, off = _unpack_json(buf, off)
    if EncoderConfig(**cfg_dict) != model.cfg:
        raise ValidationError("checkpoint config does not match the model")
    count = struct.unpack_from("<I", buf, off)[0]
    off += 4
    named = model.named_parameters()
    seen = set()
    for _ in range(count):
        n = struct.unpack_from("<H", buf, off)[0]
        off += 2
        name = bytes(buf[off:off + n]).decode()
        off += n
        data, off = _unpack_array(buf, off, "<f8")
        if name not in named:
            raise ValidationError(f"checkpoint tensor {name!r} unknown to model")
        if named[name].data.shape != data.shape:
            raise ValidationError(
                f"{name}: checkpoint shape {data.shape} vs model "
                f"{named[name].data.shape}")
        named[name].data = data
        seen.add(name)
    missing = set(named) - seen
    if missing:
        raise ValidationError(f"checkpoint missing tensors: {sorted(missing)[:3]}")


# -- worlds and episodes (versioned JSON) -------------------------------------


def world_to_dict(world: World) -> dict:
    return {
        "format": "mapnav-world",
        "version": 1,
        "seed": world.seed,
        "params": asdict(world.params),
        "rooms": [{"id": r.id, "class_id": r.class_id,
                   "extent": [r.x0, r.y0, r.x1, r.y1],
                   "doors": [[w, c, wd, o] for (w, c, wd, o) in r.doors]}
                  for r in world.rooms],
        "nodes": [{"id": nid,
                   "position": [float(x) for x in world.node_position(nid)],
                   "room": world.node_room(nid).id}
                  for nid in world.node_ids],
        "edges": [[a, b, d] for a in world.node_ids
                  for b, d in sorted(world.neighbors(a).items()) if a < b],
        "vocab": world.vocab,
    }


def world_from_dict(doc: dict) -> World:
    if doc.get("format") != "mapnav-world" or doc.get("version") != 1:
        raise ValidationError("not a version-1 mapnav world document")
    params = WorldParams(**doc["params"])
    rooms = [Room(r["id"], r["class_id"], *r["extent"],
                  doors=[tuple(d) for d in r["doors"]])
             for r in doc["rooms"]]
    positions = {n["id"]: np.asarray(n["position"], dtype=np.float64)
                 for n in doc["nodes"]}
    node_rooms = {n["id"]: n["room"] for n in doc["nodes"]}
    adjacency: dict[str, dict[str, float]] = {nid: {} for nid in positions}
    for a, b, d in doc["edges"]:
        adjacency[a][b] = float(d)
        adjacency[b][a] = float(d)
    return World(doc["seed"], params, rooms, positions, node_rooms, adjacency)


def save_world(world: World, path: str) -> None:
    write_atomic(path, json.dumps(world_to_dict(world), indent=1))


def load_world(path: str) -> World:
    with open(path) as fh:
        return world_from_dict(json.load(fh))


def episodes_to_dict(world: World, episodes) -> dict:
    return {
        "format": "mapnav-episodes",
        "version": 1,
        "world": world_to_dict(world),
        "episodes": [{
            "start": e.start, "target": e.target,
            "expert_path": e.expert_path, "instruction": list(map(int, e.instruction)),
            "instruction_text": e.instruction_text, "kind": e.kind,
            "seed": e.seed, "success_radius": e.success_radius,
        } for e in episodes],
    }


def save_episodes(world: World, episodes, path: str) -> None:
    write_atomic(path, json.dumps(episodes_to_dict(world, episodes), indent=1))


def load_episodes(path: str):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "mapnav-episodes" or doc.get("version") != 1:
        raise ValidationError("not a version-1 mapnav episodes document")
    world = world_from_dict(doc["world"])
    episodes = [Episode(start=e["start"], target=e["target"],
                        expert_path=e["expert_path"],
                        instruction=e["instruction"],
                        instruction_text=e["instruction_text"],
                        kind=e["kind"], seed=e["seed"],
                        success_radius=e["success_radius"])
                for e in doc["episodes"]]
    return world, episodes


# -- topological map and text exports -----------------------------------------


def topo_to_dict(topo: TopoMap) -> dict:
    nodes = []
    for nid, node in topo.nodes.items():
        nodes.append({
            "id": nid,
            "kind": node.kind.value,
            "position": (None if node.position is None
                         else [float(x) for x in node.position]),
            "last_visit_step": node.last_visit_step,
            "obs_count": node.obs_count,
        })
    return {"format": "mapnav-topo", "version": 1, "nodes": nodes,
            "edges": [[a, b, d] for a, b, d in topo.edges()],
            "candidate_order": list(topo.candidate_order)}


def save_topo(topo: TopoMap, path: str) -> None:
    write_atomic(path, json.dumps(topo_to_dict(topo), indent=1))


def pgm_text(grid: np.ndarray, max_value: int = 255) -> str:
    """P2 (ASCII) PGM image of a 2D array scaled to [0, max_value]."""
    grid = np.asarray(grid, dtype=np.float64)
    top = grid.max()
    scaled = (np.zeros_like(grid) if top <= 0
              else np.round(grid / top * max_value)).astype(int)
    rows = "\n".join(" ".join(str(v) for v in row) for row in scaled)
    return f"P2\n{grid.shape[1]} {grid.shape[0]}\n{max_value}\n{rows}\n"


def export_map_text(m: MetricMap, out_dir: str) -> list[str]:
    """Per-channel CSVs plus occupancy / navigability PGM images."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name: str, text: str):
        path = os.path.join(out_dir, name)
        write_atomic(path, text)
        written.append(path)

    for ch in range(m.feature_dim):
        rows = "\n".join(",".join(f"{x:.9g}" for x in row)
                         for row in m.features[:, :, ch])
        emit(f"features_ch{ch:03d}.csv", rows + "\n")
    emit("counts.csv", "\n".join(",".join(str(c) for c in row)
                                 for row in m.counts) + "\n")
    emit("semantics.csv", "\n".join(",".join(str(int(s)) for s in row)
                                    for row in m.semantics) + "\n")
    emit("occupancy.pgm", pgm_text(m.observed.astype(float)))
    emit("navigable.pgm", pgm_text(m.navigable.astype(float)))
    return written


def metrics_csv(records) -> str:
    from .metrics import METRIC_FIELDS
    lines = [",".join(METRIC_FIELDS)]
    for r in records:
        lines.append(",".join(f"{getattr(r, f):.6g}" for f in METRIC_FIELDS))
    return "\n".join(lines) + "\n"


def history_csv(history) -> str:
    lines = ["step,task,loss"]
    for step, task, loss in history:
        lines.append(f"{step},{task},{loss:.9g}")
    return "\n".join(lines) + "\n"


def jsonl(rows) -> str:
    return "".join(json.dumps(row) + "\n" for row in rows)

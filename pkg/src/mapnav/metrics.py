"""Navigation evaluation: TL, NE, SR, OSR, SPL, NDTW, SDTW."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels

SUCCESS_RADIUS = 3.0

METRIC_FIELDS = ("tl", "ne", "sr", "osr", "spl", "ndtw", "sdtw")


@dataclass(frozen=True)
class MetricRecord:
    tl: float
    ne: float
    sr: float
    osr: float
    spl: float
    ndtw: float
    sdtw: float

    def as_dict(self) -> dict:
        return asdict(self)


def path_length(positions: np.ndarray) -> float:
    if len(positions) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(positions, axis=0), axis=1).sum())


def ndtw(positions: np.ndarray, reference: np.ndarray,
         threshold: float = SUCCESS_RADIUS) -> float:
    """Normalized dynamic time warping fidelity in (0, 1].

    exp(-DTW / (len(reference) * threshold)) with Euclidean step costs.
    """
    cost = kernels.dtw_cost(np.asarray(positions, dtype=np.float64),
                            np.asarray(reference, dtype=np.float64))
    return float(np.exp(-cost / (len(reference) * threshold)))


def evaluate(trajectory, episode, world,
             radius: float = SUCCESS_RADIUS) -> MetricRecord:
    """Score one trajectory (a node-id sequence) against its episode."""
    node_ids = list(getattr(trajectory, "nodes", trajectory))
    if not node_ids:
        raise ValueError("trajectory must contain at least the start node")
    positions = np.stack([world.node_position(n) for n in node_ids])
    target = world.node_position(episode.target)

    tl = path_length(positions)
    dists = np.linalg.norm(positions - target, axis=1)
    ne = float(dists[-1])
    sr = 1.0 if ne < radius else 0.0
    osr = 1.0 if (dists < radius).any() else 0.0
    optimal = world.graph_distance(episode.start, episode.target)
    if optimal <= 0.0:
        spl = sr
    else:
        spl = sr * optimal / max(optimal, tl)
    reference = np.stack([world.node_position(n) for n in episode.expert_path])
    fidelity = ndtw(positions, reference, radius)
    return MetricRecord(tl=tl, ne=ne, sr=sr, osr=osr, spl=spl,
                        ndtw=fidelity, sdtw=sr * fidelity)


def aggregate(records) -> dict:
    """Means over episodes; SR and OSR reported as percentages."""
    records = list(records)
    if not records:
        raise ValueError("nothing to aggregate")
    out = {}
    for name in METRIC_FIELDS:
        mean = float(np.mean([getattr(r, name) for r in records]))
        out[name] = mean * 100.0 if name in ("sr", "osr") else mean
    out["episodes"] = len(records)
    return out

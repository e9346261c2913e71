import numpy as np
import pytest

from mapnav.config import RunConfig
from mapnav.encoders import build_model
from mapnav.env import Room, World, WorldParams, generate_episode, \
    generate_world


def make_chain_world(n=6, spacing=1.0):
    """Hand-built single-room corridor of n collinear nodes."""
    params = WorldParams(n_rooms=2, nodes_per_room=1, obs_dim=4,
                         num_classes=2, num_views=4, obs_grid=3)
    room = Room(0, 0, -1.0, -1.0, (n - 1) * spacing + 1.0, 1.0)
    names = [f"n{i}" for i in range(n)]
    positions = {name: np.array([i * spacing, 0.0, 0.0])
                 for i, name in enumerate(names)}
    adjacency = {name: {} for name in names}
    for a, b in zip(names, names[1:]):
        adjacency[a][b] = adjacency[b][a] = spacing
    return World(0, params, [room], positions,
                 {name: 0 for name in names}, adjacency)


@pytest.fixture(scope="session")
def run_config():
    # small map + coarse observation grid keeps the suite fast
    return RunConfig(map_u=11, map_v=11, obs_grid=7, rooms=4)


@pytest.fixture(scope="session")
def world(run_config):
    return generate_world(7, run_config.world_params())


@pytest.fixture(scope="session")
def episode(world):
    return generate_episode(world, 0, "goal")


@pytest.fixture(scope="session")
def model(run_config, world):
    return build_model(run_config.encoder_config(len(world.vocab)), 0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)

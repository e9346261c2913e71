"""Run configuration: defaults, key=value config files, flag overrides.

Precedence is defaults < config file < command-line flags.  The file format
is one ``key = value`` pair per line with ``#`` comments; keys match the
RunConfig field names.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .encoders import EncoderConfig
from .env import WorldParams
from .errors import ValidationError
from .metric import MapSpec


@dataclass
class RunConfig:
    # world generation
    rooms: int = 4
    nodes_per_room: int = 4
    obs_dim: int = 32
    classes: int = 8
    views: int = 12
    obs_grid: int = 14
    hfov: float = 2.0 * math.pi / 12
    vfov: float = math.pi / 3
    max_range: float = 10.0
    room_size: float = 4.0
    # metric map
    map_u: int = 21
    map_v: int = 21
    cell_size: float = 0.5
    z_min: float = -0.5
    z_max: float = 2.5
    kappa: int = 1
    # model
    dim: int = 64
    heads: int = 4
    text_layers: int = 2
    pano_layers: int = 2
    long_layers: int = 2
    short_layers: int = 2
    max_len: int = 64
    ffn_mult: int = 4
    max_step_embed: int = 50
    # training
    steps: int = 1000
    batch_size: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup: int = 100
    grad_clip: float = 1.0
    mask_p: float = 0.15
    lam: float = 0.2
    label_kind: str = "goal"
    max_steps: int = 15
    # run
    seed: int = 0
    threads: int = 1

    def world_params(self) -> WorldParams:
        return WorldParams(n_rooms=self.rooms, nodes_per_room=self.nodes_per_room,
                           obs_dim=self.obs_dim, num_classes=self.classes,
                           num_views=self.views, obs_grid=self.obs_grid,
                           hfov=self.hfov, vfov=self.vfov,
                           max_range=self.max_range, room_size=self.room_size)

    def map_spec(self) -> MapSpec:
        return MapSpec(u=self.map_u, v=self.map_v, cell_size=self.cell_size,
                       z_min=self.z_min, z_max=self.z_max)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, dim=self.dim,
                             heads=self.heads, text_layers=self.text_layers,
                             pano_layers=self.pano_layers,
                             long_layers=self.long_layers,
                             short_layers=self.short_layers,
                             max_len=self.max_len, ffn_mult=self.ffn_mult,
                             obs_dim=self.obs_dim, num_classes=self.classes,
                             max_step_embed=self.max_step_embed)


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """defaults < file < overrides (values may arrive as strings)."""
    cfg = RunConfig()
    by_name = {f.name: f for f in fields(RunConfig)}

    def apply(name: str, value):
        f = by_name.get(name)
        if f is None:
            raise ValidationError(f"unknown config key {name!r}")
        if isinstance(value, str) and f.type in ("int", "float"):
            value = float(value) if f.type == "float" else int(value)
        setattr(cfg, name, value)

    if path:
        with open(path) as fh:
            for key, value in parse_config_text(fh.read()).items():
                apply(key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            apply(key, value)
    return cfg


def config_text(cfg: RunConfig) -> str:
    return "\n".join(f"{k} = {v}" for k, v in asdict(cfg).items()) + "\n"

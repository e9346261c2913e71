"""Command-line entry point.

Subcommands: gen-world, gen-episodes, pretrain, finetune, eval, export-map,
inspect.  Global flags (--seed, --config, --out, --threads) may be given on
any subcommand; precedence is defaults < --config file < flags.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import __version__
from .agent import FinetuneConfig, FinetuneTrainer, RolloutConfig, rollout
from .config import RunConfig, load_config
from .encoders import NavModel, build_model
from .env import generate_episode, generate_world
from .errors import MapnavError
from .exporters import (export_map_text, history_csv, jsonl, load_episodes,
                        metrics_csv, read_checkpoint_config, read_kind,
                        save_checkpoint, save_episodes, save_metric_map,
                        save_topo, save_world, load_world, load_checkpoint,
                        write_atomic, KIND_CHECKPOINT, KIND_METRIC_MAP,
                        KIND_POINTCLOUD)
from .metrics import aggregate, evaluate
from .pretrain import PretrainConfig, PretrainTrainer
from .runner import replay_prefix
from .seeding import substream
from .topo import STOP_NODE


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common(sub: argparse.ArgumentParser):
    sub.add_argument("--seed", type=int, default=None, help="run seed")
    sub.add_argument("--config", default=None, help="key=value config file")
    sub.add_argument("--out", default=None, help="output file or directory")
    sub.add_argument("--threads", type=int, default=None, help="worker threads")


def build_parser() -> Parser:
    parser = Parser(prog="mapnav", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = subs.add_parser("gen-world", parents=[], help="generate a world file")
    _common(p)
    p.add_argument("--rooms", type=int, default=None)
    p.add_argument("--nodes-per-room", dest="nodes_per_room", type=int, default=None)

    p = subs.add_parser("gen-episodes", help="sample episodes over a world")
    _common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--kind", choices=["goal", "fidelity"], default="goal")
    p.add_argument("--first-seed", type=int, default=0,
                   help="episode seeds run first-seed .. first-seed+count-1")

    p = subs.add_parser("pretrain", help="run the map pre-training loop")
    _common(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--steps", type=int, default=None)

    p = subs.add_parser("finetune", help="teacher/student fine-tuning")
    _common(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--ckpt", default=None, help="checkpoint to start from")
    p.add_argument("--steps", type=int, default=None)

    p = subs.add_parser("eval", help="greedy evaluation over an episode file")
    _common(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--policy", choices=["model", "expert", "random"],
                   default="model")

    p = subs.add_parser("export-map", help="dump maps built along an episode")
    _common(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--index", type=int, default=0, help="episode index")
    p.add_argument("--prefix", type=int, default=None,
                   help="expert prefix length (default: full path)")

    p = subs.add_parser("inspect", help="print file headers")
    _common(p)
    p.add_argument("path")
    return parser


def _config(args, **extra) -> RunConfig:
    overrides = {"seed": getattr(args, "seed", None),
                 "threads": getattr(args, "threads", None)}
    overrides.update(extra)
    return load_config(getattr(args, "config", None), overrides)


def _need_out(args) -> str:
    if not args.out:
        raise UsageError("this command requires --out")
    return args.out


def _outdir(args) -> str:
    out = _need_out(args)
    os.makedirs(out, exist_ok=True)
    return out


def _build_corpus(world, episodes):
    return [(world, e) for e in episodes]


def _model_for(cfg: RunConfig, world, ckpt: str | None) -> NavModel:
    if ckpt:
        enc_cfg = read_checkpoint_config(ckpt)
        model = build_model(enc_cfg, cfg.seed)
        load_checkpoint(model, ckpt)
        return model
    return build_model(cfg.encoder_config(len(world.vocab)), cfg.seed)


def cmd_gen_world(args) -> int:
    cfg = _config(args, rooms=args.rooms, nodes_per_room=args.nodes_per_room)
    world = generate_world(cfg.seed, cfg.world_params())
    save_world(world, _need_out(args))
    print(f"world seed={cfg.seed} rooms={cfg.rooms} nodes={len(world.node_ids)} "
          f"-> {args.out}")
    return 0


def cmd_gen_episodes(args) -> int:
    cfg = _config(args)
    world = load_world(args.world)
    seeds = list(range(args.first_seed, args.first_seed + args.count))

    def gen(seed):
        return generate_episode(world, seed, args.kind)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            episodes = list(pool.map(gen, seeds))
    else:
        episodes = [gen(s) for s in seeds]
    save_episodes(world, episodes, _need_out(args))
    print(f"{len(episodes)} {args.kind} episodes -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config(args, steps=args.steps)
    out = _outdir(args)
    world, episodes = load_episodes(args.episodes)
    model = build_model(cfg.encoder_config(len(world.vocab)), cfg.seed)
    trainer = PretrainTrainer(
        model, _build_corpus(world, episodes), cfg.map_spec(),
        PretrainConfig(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr,
                       weight_decay=cfg.weight_decay, warmup=cfg.warmup,
                       grad_clip=cfg.grad_clip, mask_p=cfg.mask_p,
                       kappa=cfg.kappa),
        cfg.seed)
    for step in range(cfg.steps):
        task, loss = trainer.step()
        if (step + 1) % 50 == 0 or step == 0:
            print(f"step {step + 1}/{cfg.steps} task={task} loss={loss:.4f}")
    save_checkpoint(model, os.path.join(out, "checkpoint.bin"))
    write_atomic(os.path.join(out, "pretrain_loss.csv"),
                 history_csv(trainer.history))
    return 0


def cmd_finetune(args) -> int:
    cfg = _config(args, steps=args.steps)
    out = _outdir(args)
    world, episodes = load_episodes(args.episodes)
    model = _model_for(cfg, world, args.ckpt)
    trainer = FinetuneTrainer(
        model, _build_corpus(world, episodes), cfg.map_spec(),
        FinetuneConfig(steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr,
                       weight_decay=cfg.weight_decay, warmup=cfg.warmup,
                       grad_clip=cfg.grad_clip, kappa=cfg.kappa,
                       rollout=RolloutConfig(max_steps=cfg.max_steps,
                                             mode="sample", lam=cfg.lam,
                                             label_kind=cfg.label_kind)),
        cfg.seed)
    for step in range(cfg.steps):
        phase, loss = trainer.step()
        if (step + 1) % 50 == 0 or step == 0:
            print(f"step {step + 1}/{cfg.steps} phase={phase} loss={loss:.4f}")
    save_checkpoint(model, os.path.join(out, "checkpoint.bin"))
    write_atomic(os.path.join(out, "finetune_loss.csv"),
                 history_csv(trainer.history))
    return 0


class _ExpertPolicy:
    """Replays the expert path: pick the next expert node, then stop."""

    def __init__(self, episode):
        self.path = episode.expert_path
        self.cursor = 0

    def __call__(self, state, actions):
        self.cursor += 1
        target = (self.path[self.cursor] if self.cursor < len(self.path)
                  else STOP_NODE)
        return [1.0 if a.node_id == target else 0.0 for a in actions]


def _run_eval(world, episodes, model, policy_kind: str, cfg: RunConfig):
    spec = cfg.map_spec()

    def one(item):
        index, episode = item
        policy = None
        rc = RolloutConfig(max_steps=cfg.max_steps, mode="greedy")
        if policy_kind == "expert":
            policy = _ExpertPolicy(episode)
            rc = RolloutConfig(max_steps=len(episode.expert_path) + 1,
                               mode="greedy")
        elif policy_kind == "random":
            rng = substream(cfg.seed, "eval-random", index)
            policy = lambda state, actions: rng.random(len(actions))
        traj, log = rollout(model, world, episode, spec, cfg.kappa, rc,
                            policy=policy)
        record = evaluate(traj, episode, world)
        return index, traj, log, record

    items = list(enumerate(episodes))
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(item) for item in items]
    return results


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _outdir(args)
    world, episodes = load_episodes(args.episodes)
    model = None
    if args.policy == "model":
        model = _model_for(cfg, world, args.ckpt)
    results = _run_eval(world, episodes, model, args.policy, cfg)

    records = [r for _, _, _, r in results]
    summary = aggregate(records)
    summary["policy"] = args.policy
    summary["seed"] = cfg.seed
    write_atomic(os.path.join(out, "summary.json"),
                 json.dumps(summary, indent=1, sort_keys=True))
    write_atomic(os.path.join(out, "metrics.csv"), metrics_csv(records))
    rows = []
    for index, traj, log, record in results:
        rows.append({"episode": index, "trajectory": traj.nodes,
                     "stopped": traj.stopped, "metrics": record.as_dict(),
                     "decisions": log})
    write_atomic(os.path.join(out, "rollouts.jsonl"), jsonl(rows))
    print(f"episodes={summary['episodes']} SR={summary['sr']:.1f}% "
          f"SPL={summary['spl']:.3f} NDTW={summary['ndtw']:.3f}")
    return 0


def cmd_export_map(args) -> int:
    cfg = _config(args)
    out = _outdir(args)
    world, episodes = load_episodes(args.episodes)
    if not 0 <= args.index < len(episodes):
        raise UsageError(f"episode index {args.index} out of range")
    episode = episodes[args.index]
    length = args.prefix or len(episode.expert_path)
    state = replay_prefix(world, None, episode, length, cfg.map_spec(),
                          cfg.kappa)
    mmap, _, _, _ = state.build_step()
    save_metric_map(mmap, os.path.join(out, "metric_map.bin"))
    export_map_text(mmap, out)
    save_topo(state.topo, os.path.join(out, "topo.json"))
    print(f"exported maps after {length} expert steps -> {out}")
    return 0


def cmd_inspect(args) -> int:
    path = args.path
    if path.endswith(".json") or path.endswith(".jsonl"):
        with open(path) as fh:
            doc = json.load(fh)
        kind = doc.get("format", "json")
        print(f"{path}: {kind} version={doc.get('version')}")
        if kind == "mapnav-world":
            print(f"  seed={doc['seed']} rooms={len(doc['rooms'])} "
                  f"nodes={len(doc['nodes'])} edges={len(doc['edges'])}")
        elif kind == "mapnav-episodes":
            print(f"  episodes={len(doc['episodes'])} "
                  f"world nodes={len(doc['world']['nodes'])}")
        return 0
    kind = read_kind(path)
    if kind == KIND_CHECKPOINT:
        cfg = read_checkpoint_config(path)
        print(f"{path}: checkpoint dim={cfg.dim} heads={cfg.heads} "
              f"vocab={cfg.vocab_size}")
    elif kind == KIND_METRIC_MAP:
        print(f"{path}: metric map container")
    elif kind == KIND_POINTCLOUD:
        print(f"{path}: point cloud container")
    else:
        print(f"{path}: unknown container kind {kind}")
    return 0


COMMANDS = {
    "gen-world": cmd_gen_world,
    "gen-episodes": cmd_gen_episodes,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "export-map": cmd_export_map,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage())
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except MapnavError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

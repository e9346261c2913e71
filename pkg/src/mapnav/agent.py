"""Greedy/sampled rollouts, pseudo labels, and fine-tuning.

Fine-tuning alternates minibatches of teacher forcing (action losses along
the expert path, weighted by lambda) and student forcing (on-policy sampled
rollouts supervised by goal- or fidelity-oriented pseudo labels).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .env import World
from .metric import MapSpec
from .metrics import SUCCESS_RADIUS, ndtw
from .optim import AdamW
from .pretrain import hsap_loss, hsap_scores
from .runner import EpisodeState
from .topo import STOP_NODE


@dataclass
class RolloutConfig:
    max_steps: int = 15
    mode: str = "greedy"            # greedy | sample
    lam: float = 0.2                # weight on the teacher-forcing loss
    label_kind: str = "goal"        # goal | fidelity pseudo labels
    success_radius: float = SUCCESS_RADIUS

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.mode not in ("greedy", "sample"):
            raise ValueError(f"unknown rollout mode {self.mode!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


@dataclass
class Trajectory:
    nodes: list[str]
    length: float = 0.0
    stopped: bool = False           # explicit stop vs. step-budget cutoff

    def __iter__(self):
        return iter(self.nodes)


def _trajectory(world: World, nodes: list[str], stopped: bool) -> Trajectory:
    length = 0.0
    for a, b in zip(nodes, nodes[1:]):
        length += float(np.linalg.norm(world.node_position(a)
                                       - world.node_position(b)))
    return Trajectory(list(nodes), length, stopped)


def rollout(model, world: World, episode, spec: MapSpec, kappa: int,
            cfg: RolloutConfig, rng=None, policy=None):
    """Run one episode; returns (Trajectory, per-step action log).

    The decision loop scores [stop] + the global action space each step;
    greedy takes the argmax, sample draws from the softmax.  Choosing a
    non-adjacent node executes the map-shortest path to it as environment
    moves without new decisions.  The loop force-stops after max_steps.

    ``policy`` overrides model scoring: it gets (state, actions) and returns
    a plain score array, one per action.
    """
    if cfg.mode == "sample" and rng is None:
        raise ValueError("sampled rollouts need an rng")
    state = EpisodeState(world, model, spec, kappa)
    state.arrive(episode.start)
    text = None
    if policy is None:
        with ag.no_grad():
            text = model.encode_text(episode.instruction)
    log = []
    stopped = False
    for step in range(1, cfg.max_steps + 1):
        if policy is not None:
            _, _, _, actions = state.build_step()
            scores = np.asarray(policy(state, actions), dtype=np.float64)
            delta = None
        else:
            with ag.no_grad():
                _, nodes, cells, actions = state.build_step()
                enc = model.encode_step(text, nodes, cells)
                fused = hsap_scores(model, enc, actions)
            scores = fused.fused.data
            delta = fused.delta
        if cfg.mode == "sample":
            probs = np.exp(scores - scores.max())
            probs /= probs.sum()
            choice = int(rng.choice(len(scores), p=probs))
        else:
            choice = int(np.argmax(scores))
        log.append(_log_entry(step, state, actions, scores, choice, delta))
        if actions[choice].node_id == STOP_NODE:
            stopped = True
            break
        target = actions[choice].node_id
        state.move_to(target)
        state.arrive(target)
    return _trajectory(world, state.trajectory, stopped), log


def _log_entry(step, state, actions, scores, choice, delta, label=None):
    order = np.argsort(scores)[::-1][:5]
    entry = {
        "step": step,
        "at": state.current_id,
        "chosen": actions[choice].node_id,
        "delta": delta,
        "top": [{"node": actions[i].node_id, "score": float(scores[i])}
                for i in order],
    }
    if label is not None:
        entry["label"] = label
    return entry


def goal_pseudo_label(state: EpisodeState, world: World, target: str,
                      radius: float = SUCCESS_RADIUS) -> str:
    """Stop when already within the success radius, otherwise the actionable
    node with the smallest world-graph distance to the target."""
    current = state.topo.current_node()
    if float(np.linalg.norm(current.position - world.node_position(target))) < radius:
        return STOP_NODE
    best, best_dist = None, np.inf
    for nid in state.topo.global_action_space():
        if nid == STOP_NODE:
            continue
        d = world.graph_distance(nid, target)
        if d < best_dist - 1e-12:
            best, best_dist = nid, d
    if best is None:
        return STOP_NODE
    return best


def fidelity_pseudo_label(state: EpisodeState, world: World,
                          expert_path: list[str]) -> str:
    """The actionable node whose shortest-path extension of the current
    trajectory has the highest fidelity to the expert path (stop extends
    nothing); ties keep the earliest action."""
    reference = np.stack([world.node_position(n) for n in expert_path])

    def fidelity_of(nodes: list[str]) -> float:
        positions = np.stack([world.node_position(n) for n in nodes])
        return ndtw(positions, reference)

    best, best_score = STOP_NODE, fidelity_of(state.trajectory)
    for nid in state.topo.global_action_space():
        if nid == STOP_NODE:
            continue
        extension = state.topo.shortest_path(state.current_id, nid)
        candidate = state.trajectory + extension[1:]
        score = fidelity_of(candidate)
        if score > best_score + 1e-12:
            best, best_score = nid, score
    return best


@dataclass
class FinetuneConfig:
    steps: int = 2000
    batch_size: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup: int = 100
    grad_clip: float = 1.0
    kappa: int = 1
    rollout: RolloutConfig = field(default_factory=RolloutConfig)


class FinetuneTrainer:
    """Strict 1:1 alternation of teacher- and student-forcing minibatches."""

    def __init__(self, model, corpus, spec: MapSpec, cfg: FinetuneConfig,
                 seed: int):
        from .seeding import substream

        self.model = model
        self.corpus = list(corpus)  # (world, episode) pairs
        self.spec = spec
        self.cfg = cfg
        self.opt = AdamW(model.parameters(), lr=cfg.lr,
                         weight_decay=cfg.weight_decay, warmup=cfg.warmup,
                         total_steps=cfg.steps, grad_clip=cfg.grad_clip)
        self._batch_rng = substream(seed, "finetune", "sample")
        self._action_rng = substream(seed, "finetune", "actions")
        self.history: list[tuple[int, str, float]] = []

    def _teacher_loss(self, world: World, episode) -> ag.Tensor:
        """Sum of action cross-entropies along the expert path."""
        state = EpisodeState(world, self.model, self.spec, self.cfg.kappa)
        text = self.model.encode_text(episode.instruction)
        state.arrive(episode.expert_path[0])
        total = None
        path = episode.expert_path
        for t in range(len(path)):
            teacher = path[t + 1] if t + 1 < len(path) else STOP_NODE
            _, nodes, cells, actions = state.build_step()
            enc = self.model.encode_step(text, nodes, cells)
            loss = hsap_loss(hsap_scores(self.model, enc, actions), teacher)
            total = loss if total is None else total + loss
            if teacher != STOP_NODE:
                state.move_to(teacher)
                state.arrive(teacher)
        return total

    def _student_loss(self, world: World, episode) -> ag.Tensor:
        """On-policy sampled rollout supervised per step by pseudo labels."""
        cfg = self.cfg.rollout
        state = EpisodeState(world, self.model, self.spec, self.cfg.kappa)
        text = self.model.encode_text(episode.instruction)
        state.arrive(episode.start)
        total = None
        for _ in range(cfg.max_steps):
            _, nodes, cells, actions = state.build_step()
            enc = self.model.encode_step(text, nodes, cells)
            scores = hsap_scores(self.model, enc, actions)
            if cfg.label_kind == "fidelity":
                label = fidelity_pseudo_label(state, world, episode.expert_path)
            else:
                label = goal_pseudo_label(state, world, episode.target,
                                          cfg.success_radius)
            loss = hsap_loss(scores, label)
            total = loss if total is None else total + loss

            logits = scores.fused.data
            probs = np.exp(logits - logits.max())
            probs /= probs.sum()
            choice = int(self._action_rng.choice(len(probs), p=probs))
            if actions[choice].node_id == STOP_NODE:
                break
            state.move_to(actions[choice].node_id)
            state.arrive(actions[choice].node_id)
        return total

    def step(self) -> tuple[str, float]:
        phase = "teacher" if self.opt.t % 2 == 0 else "student"
        picks = self._batch_rng.integers(0, len(self.corpus),
                                         size=self.cfg.batch_size)
        losses = []
        for i in picks:
            world, episode = self.corpus[i]
            if phase == "teacher":
                losses.append(self.cfg.rollout.lam * self._teacher_loss(world, episode))
            else:
                losses.append(self._student_loss(world, episode))
        total = losses[0]
        for extra in losses[1:]:
            total = total + extra
        total = total / len(losses)
        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        value = float(total.data)
        self.history.append((self.opt.t, phase, value))
        return phase, value

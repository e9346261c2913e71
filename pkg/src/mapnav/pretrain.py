"""Map-based pre-training: masked words, action prediction, masked semantics.

Three proxy tasks drive one shared model:
  - masked-word recovery over the instruction, read out from the sum of the
    long-branch and short-branch word representations,
  - single-action prediction with gated fusion of node-level and cell-level
    scores over the shared action space,
  - masked-cell semantic imagination, a per-cell multi-label head.

One task is sampled per minibatch at a 5:5:1 ratio and each sampled expert
trajectory is chunked to a uniformly random prefix before the maps are built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoders import NavModel, StepEncoding
from .errors import LabelError
from .features import ActionEntry, cell_inputs
from .metric import MetricMap
from .optim import AdamW
from .runner import replay_prefix
from .topo import STOP_NODE

TASKS = ("hmlm", "hsap", "msi")
TASK_RATIOS = (5.0, 5.0, 1.0)
MASK_PROB = 0.15


@dataclass(frozen=True)
class TokenMaskPlan:
    indices: np.ndarray    # masked positions
    originals: np.ndarray  # token ids before masking


@dataclass(frozen=True)
class CellMaskPlan:
    cells: list            # flat cell indices
    bitsets: np.ndarray    # ground-truth semantic bitsets per masked cell


@dataclass
class FusedScores:
    actions: list              # ActionEntry per row
    fused: Tensor              # (A,) gated scores
    node_scores: np.ndarray    # (A,) detached s_G
    cell_scores: dict          # action row -> detached s_M
    delta: float

    def argmax(self) -> int:
        return int(np.argmax(self.fused.data))


def mask_tokens(tokens, p: float, rng, mask_id: int):
    """Independently replace each token by the mask id with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("mask probability must be in [0, 1]")
    tokens = np.asarray(tokens, dtype=np.int64)
    hits = rng.random(len(tokens)) < p
    masked = np.where(hits, mask_id, tokens)
    idx = np.flatnonzero(hits)
    return masked, TokenMaskPlan(idx, tokens[idx])


def mask_cells(metric_map: MetricMap, p: float, rng):
    """Hide observed cells: features zeroed, mask flag set for the encoder.

    Only observed cells are maskable; the plan records each masked cell's
    true semantic bitset for the imagination loss.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("mask probability must be in [0, 1]")
    spec = metric_map.spec
    masked_grid = metric_map.mask_grid().copy()
    features = metric_map.features.copy()
    cells, bits = [], []
    obs_u, obs_v = np.nonzero(metric_map.observed)
    hits = rng.random(len(obs_u)) < p
    for u, v, hit in zip(obs_u, obs_v, hits):
        if not hit:
            continue
        masked_grid[u, v] = True
        features[u, v] = 0.0
        cells.append(int(u) * spec.v + int(v))
        bits.append(metric_map.semantics[u, v])
    out = MetricMap(spec=spec, features=features, counts=metric_map.counts,
                    observed=metric_map.observed, semantics=metric_map.semantics,
                    navigable=metric_map.navigable,
                    cell_to_nodes=metric_map.cell_to_nodes, masked=masked_grid)
    return out, CellMaskPlan(cells, np.asarray(bits, dtype=np.uint64))


def bitset_targets(bitsets: np.ndarray, num_classes: int) -> np.ndarray:
    """(M, C) float targets from uint64 bitsets."""
    shifts = np.arange(num_classes, dtype=np.uint64)
    return ((bitsets[:, None] >> shifts) & np.uint64(1)).astype(np.float64)


def hmlm_loss(model: NavModel, enc: StepEncoding, plan: TokenMaskPlan) -> Tensor:
    """Mean negative log-likelihood of the original tokens at masked spots."""
    if len(plan.indices) == 0:
        return Tensor(0.0)
    reps = (ag.take_rows(enc.text_long, plan.indices)
            + ag.take_rows(enc.text_short, plan.indices))
    logp = ag.log_softmax(model.word_head(reps), axis=-1)
    onehot = np.zeros((len(plan.indices), model.cfg.vocab_size))
    onehot[np.arange(len(plan.indices)), plan.originals] = 1.0
    return -(logp * onehot).sum() / len(plan.indices)


def hsap_scores(model: NavModel, enc: StepEncoding,
                actions: list[ActionEntry]) -> FusedScores:
    """Gated fusion of node-level and cell-level action scores.

    Every action gets a node score; actions registered in the local action
    space also get a cell score and are fused with the state gate, the rest
    keep the node score alone.
    """
    node_rows = ag.take_rows(enc.node_reps, [a.node_index for a in actions])
    s_g = model.node_score(node_rows).reshape(len(actions))

    state = ag.concat([enc.node_reps[0:1], enc.cell_reps[enc.central_index:
                                                         enc.central_index + 1]],
                      axis=-1)
    delta = ag.sigmoid(model.gate(state).reshape(()))

    with_cells = [i for i, a in enumerate(actions) if a.cell_index is not None]
    cell_detached: dict[int, float] = {}
    if with_cells:
        cell_rows = ag.take_rows(
            enc.cell_reps, [actions[i].cell_index for i in with_cells])
        s_m = model.cell_score(cell_rows).reshape(len(with_cells))
        scatter = np.zeros((len(actions), len(with_cells)))
        for col, row in enumerate(with_cells):
            scatter[row, col] = 1.0
        s_m_full = (ag.as_tensor(scatter) @ s_m.reshape((len(with_cells), 1))
                    ).reshape(len(actions))
        member = np.zeros(len(actions))
        member[with_cells] = 1.0
        member = ag.as_tensor(member)
        fused = s_g * (delta * member + (1.0 - member)) + s_m_full * ((1.0 - delta) * member)
        for col, row in enumerate(with_cells):
            cell_detached[row] = float(s_m.data[col])
    else:
        fused = s_g
    return FusedScores(actions=actions, fused=fused,
                       node_scores=s_g.data.copy(),
                       cell_scores=cell_detached, delta=float(delta.data))


def hsap_loss(scores: FusedScores, teacher: str) -> Tensor:
    """Softmax cross-entropy over the fused scores against the teacher node."""
    ids = [a.node_id for a in scores.actions]
    try:
        target = ids.index(teacher)
    except ValueError:
        raise LabelError(f"teacher {teacher!r} not in the action space") from None
    logp = ag.log_softmax(scores.fused, axis=-1)
    onehot = np.zeros(len(ids))
    onehot[target] = 1.0
    return -(logp * onehot).sum()


def msi_loss(model: NavModel, enc: StepEncoding, plan: CellMaskPlan) -> Tensor:
    """Mean binary cross-entropy over the semantic classes of masked cells."""
    if len(plan.cells) == 0:
        return Tensor(0.0)
    logits = model.msi_head(ag.take_rows(enc.cell_reps, plan.cells))
    targets = bitset_targets(plan.bitsets, model.cfg.num_classes)
    t = ag.as_tensor(targets)
    bce = t * ag.softplus(-logits) + (1.0 - t) * ag.softplus(logits)
    return bce.mean()


def sample_task(rng, ratios=TASK_RATIOS) -> str:
    p = np.asarray(ratios, dtype=np.float64)
    return TASKS[rng.choice(len(TASKS), p=p / p.sum())]


def expert_teacher(episode, prefix_len: int) -> str:
    """Next expert node after the prefix, or stop at the path end."""
    if prefix_len < len(episode.expert_path):
        return episode.expert_path[prefix_len]
    return STOP_NODE


@dataclass
class PretrainConfig:
    steps: int = 1000
    batch_size: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup: int = 100
    grad_clip: float = 1.0
    mask_p: float = MASK_PROB
    ratios: tuple = TASK_RATIOS
    kappa: int = 1


class PretrainTrainer:
    """Task-mixing loop over (world, episode) pairs with expert paths."""

    def __init__(self, model: NavModel, corpus, spec, cfg: PretrainConfig,
                 seed: int):
        from .seeding import substream

        self.model = model
        self.corpus = list(corpus)  # (world, episode) pairs
        self.spec = spec
        self.cfg = cfg
        self.opt = AdamW(model.parameters(), lr=cfg.lr,
                         weight_decay=cfg.weight_decay, warmup=cfg.warmup,
                         total_steps=cfg.steps, grad_clip=cfg.grad_clip)
        self._task_rng = substream(seed, "pretrain", "task")
        self._mask_rng = substream(seed, "pretrain", "mask")
        self._chunk_rng = substream(seed, "pretrain", "chunk")
        self._batch_rng = substream(seed, "pretrain", "sample")
        self.history: list[tuple[int, str, float]] = []

    def _episode_loss(self, world, episode, task: str) -> Tensor:
        length = int(self._chunk_rng.integers(1, len(episode.expert_path) + 1))
        state = replay_prefix(world, self.model, episode, length,
                              self.spec, self.cfg.kappa)
        mmap, nodes, cells, actions = state.build_step()

        tokens = np.asarray(episode.instruction, dtype=np.int64)
        plan = None
        if task == "hmlm":
            tokens, plan = mask_tokens(tokens, self.cfg.mask_p,
                                       self._mask_rng, world.mask_id)
        cell_plan = None
        if task == "msi":
            mmap, cell_plan = mask_cells(mmap, self.cfg.mask_p, self._mask_rng)
            cells = cell_inputs(mmap)

        text = self.model.encode_text(tokens)
        enc = self.model.encode_step(text, nodes, cells)
        if task == "hmlm":
            return hmlm_loss(self.model, enc, plan)
        if task == "msi":
            return msi_loss(self.model, enc, cell_plan)
        scores = hsap_scores(self.model, enc, actions)
        return hsap_loss(scores, expert_teacher(episode, length))

    def step(self) -> tuple[str, float]:
        task = sample_task(self._task_rng, self.cfg.ratios)
        picks = self._batch_rng.integers(0, len(self.corpus),
                                         size=self.cfg.batch_size)
        losses = [self._episode_loss(*self.corpus[i], task) for i in picks]
        total = losses[0]
        for extra in losses[1:]:
            total = total + extra
        total = total / len(losses)
        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        value = float(total.data)
        self.history.append((self.opt.t, task, value))
        return task, value

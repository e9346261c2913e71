"""Cross-modal encoder stack over the hybrid map, with trainable parameters.

Four encoders share one model: a text encoder, a panorama encoder that
contextualizes directional view features, a long-term transformer over
topological nodes whose self-attention is biased by pairwise node distances,
and a short-term transformer over metric-map cells.  All weights are float64
and live on the reverse-mode tape from ``mapnav.autograd``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import DimensionError, VocabError


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    heads: int = 4
    text_layers: int = 2
    pano_layers: int = 2
    long_layers: int = 2
    short_layers: int = 2
    max_len: int = 64
    ffn_mult: int = 4
    obs_dim: int = 32
    num_classes: int = 8
    max_step_embed: int = 50
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if not (0 <= self.num_classes <= 64):
            raise ValueError("num_classes must fit a 64-bit semantic set")


class Linear:
    def __init__(self, rng, d_in: int, d_out: int, name: str):
        self.w = Parameter(rng.normal(0.0, 0.02, (d_in, d_out)), f"{name}.w")
        self.b = Parameter(np.zeros(d_out), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def parameters(self):
        return [self.w, self.b]


class LayerNorm:
    def __init__(self, dim: int, name: str):
        self.gain = Parameter(np.ones(dim), f"{name}.gain")
        self.bias = Parameter(np.zeros(dim), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gain, self.bias)

    def parameters(self):
        return [self.gain, self.bias]


class FeedForward:
    def __init__(self, rng, dim: int, mult: int, name: str):
        self.lin1 = Linear(rng, dim, dim * mult, f"{name}.lin1")
        self.lin2 = Linear(rng, dim * mult, dim, f"{name}.lin2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ag.gelu(self.lin1(x)))

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters()


class FFNHead:
    """Two-layer scoring head: Linear -> GELU -> Linear."""

    def __init__(self, rng, d_in: int, d_out: int, name: str):
        self.lin1 = Linear(rng, d_in, d_in, f"{name}.lin1")
        self.lin2 = Linear(rng, d_in, d_out, f"{name}.lin2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ag.gelu(self.lin1(x)))

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters()


class MultiHeadAttention:
    """Scaled dot-product attention with learned projections.

    ``bias``, when given, is an additive (len_q, len_k) term applied to the
    pre-softmax scores of every head.  ``last_score_multiplies`` records the
    scalar multiplications of the two quadratic matmuls (scores and context)
    from the shapes actually executed, for flop accounting.
    """

    def __init__(self, rng, dim: int, heads: int, name: str):
        self.dim, self.heads = dim, heads
        self.dh = dim // heads
        self.wq = Linear(rng, dim, dim, f"{name}.wq")
        self.wk = Linear(rng, dim, dim, f"{name}.wk")
        self.wv = Linear(rng, dim, dim, f"{name}.wv")
        self.wo = Linear(rng, dim, dim, f"{name}.wo")
        self.last_score_multiplies = 0

    def _split(self, x: Tensor, length: int) -> Tensor:
        return x.reshape((length, self.heads, self.dh)).swapaxes(0, 1)

    def __call__(self, q_in: Tensor, kv_in: Tensor, bias=None) -> Tensor:
        lq, lk = q_in.shape[0], kv_in.shape[0]
        if q_in.shape[1] != self.dim or kv_in.shape[1] != self.dim:
            raise DimensionError("attention inputs must match the model dim")
        q = self._split(self.wq(q_in), lq)
        k = self._split(self.wk(kv_in), lk)
        v = self._split(self.wv(kv_in), lk)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.dh))
        self.last_score_multiplies = 2 * self.heads * lq * lk * self.dh
        if bias is not None:
            bias = ag.as_tensor(bias)
            if bias.shape != (lq, lk):
                raise DimensionError(f"bias must be ({lq}, {lk})")
            scores = scores + bias.reshape((1, lq, lk))
        ctx = ag.softmax(scores, axis=-1) @ v
        return self.wo(ctx.swapaxes(0, 1).reshape((lq, self.dim)))

    def parameters(self):
        return (self.wq.parameters() + self.wk.parameters()
                + self.wv.parameters() + self.wo.parameters())


def gasa_bias(affinity: np.ndarray, w, b, stop_index: int | None = None) -> Tensor:
    """Elementwise affine map of a distance matrix into an attention bias.

    w and b are learned scalars (zero-initialized, so the bias starts out
    identically zero and the biased attention starts as plain attention).
    When ``stop_index`` is given that row and column are forced to zero.
    """
    affinity = np.asarray(affinity, dtype=np.float64)
    bias = ag.as_tensor(affinity) * w + b
    if stop_index is not None:
        mask = np.ones_like(affinity)
        mask[stop_index, :] = 0.0
        mask[:, stop_index] = 0.0
        bias = bias * ag.as_tensor(mask)
    return bias


class SelfAttentionBlock:
    """Post-norm transformer block: attention then feed-forward."""

    def __init__(self, rng, cfg: EncoderConfig, name: str):
        self.att = MultiHeadAttention(rng, cfg.dim, cfg.heads, f"{name}.att")
        self.ln1 = LayerNorm(cfg.dim, f"{name}.ln1")
        self.ffn = FeedForward(rng, cfg.dim, cfg.ffn_mult, f"{name}.ffn")
        self.ln2 = LayerNorm(cfg.dim, f"{name}.ln2")

    def __call__(self, x: Tensor, bias=None) -> Tensor:
        x = self.ln1(x + self.att(x, x, bias))
        return self.ln2(x + self.ffn(x))

    def parameters(self):
        return (self.att.parameters() + self.ln1.parameters()
                + self.ffn.parameters() + self.ln2.parameters())


class CrossModalLayer:
    """One layer of the two-stream encoder.

    Both streams cross-attend to each other (from the pre-layer values),
    then run self-attention and a feed-forward, all with residuals and
    post-norm.  The visual stream optionally biases its self-attention with
    the distance-affine map (learned per layer).
    """

    def __init__(self, rng, cfg: EncoderConfig, name: str, distance_bias: bool):
        d = cfg.dim
        self.vis_ca = MultiHeadAttention(rng, d, cfg.heads, f"{name}.vis_ca")
        self.vis_ca_ln = LayerNorm(d, f"{name}.vis_ca_ln")
        self.vis_sa = MultiHeadAttention(rng, d, cfg.heads, f"{name}.vis_sa")
        self.vis_sa_ln = LayerNorm(d, f"{name}.vis_sa_ln")
        self.vis_ffn = FeedForward(rng, d, cfg.ffn_mult, f"{name}.vis_ffn")
        self.vis_ffn_ln = LayerNorm(d, f"{name}.vis_ffn_ln")
        self.txt_ca = MultiHeadAttention(rng, d, cfg.heads, f"{name}.txt_ca")
        self.txt_ca_ln = LayerNorm(d, f"{name}.txt_ca_ln")
        self.txt_sa = MultiHeadAttention(rng, d, cfg.heads, f"{name}.txt_sa")
        self.txt_sa_ln = LayerNorm(d, f"{name}.txt_sa_ln")
        self.txt_ffn = FeedForward(rng, d, cfg.ffn_mult, f"{name}.txt_ffn")
        self.txt_ffn_ln = LayerNorm(d, f"{name}.txt_ffn_ln")
        self.distance_bias = distance_bias
        if distance_bias:
            self.bias_w = Parameter(np.zeros(()), f"{name}.bias_w")
            self.bias_b = Parameter(np.zeros(()), f"{name}.bias_b")

    def __call__(self, vis: Tensor, txt: Tensor, affinity=None,
                 stop_index: int | None = None):
        has_text = txt.shape[0] > 0
        if has_text:
            vis2 = self.vis_ca_ln(vis + self.vis_ca(vis, txt))
            txt2 = self.txt_ca_ln(txt + self.txt_ca(txt, vis))
        else:
            vis2, txt2 = vis, txt

        bias = None
        if self.distance_bias and affinity is not None:
            bias = gasa_bias(affinity, self.bias_w, self.bias_b, stop_index)
        vis3 = self.vis_sa_ln(vis2 + self.vis_sa(vis2, vis2, bias))
        vis4 = self.vis_ffn_ln(vis3 + self.vis_ffn(vis3))
        if has_text:
            txt3 = self.txt_sa_ln(txt2 + self.txt_sa(txt2, txt2))
            txt4 = self.txt_ffn_ln(txt3 + self.txt_ffn(txt3))
        else:
            txt4 = txt2
        return vis4, txt4

    def parameters(self):
        out = (self.vis_ca.parameters() + self.vis_ca_ln.parameters()
               + self.vis_sa.parameters() + self.vis_sa_ln.parameters()
               + self.vis_ffn.parameters() + self.vis_ffn_ln.parameters()
               + self.txt_ca.parameters() + self.txt_ca_ln.parameters()
               + self.txt_sa.parameters() + self.txt_sa_ln.parameters()
               + self.txt_ffn.parameters() + self.txt_ffn_ln.parameters())
        if self.distance_bias:
            out += [self.bias_w, self.bias_b]
        return out


class TextEncoder:
    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        self.tok_emb = Parameter(rng.normal(0.0, 0.02, (cfg.vocab_size, cfg.dim)),
                                 "text.tok_emb")
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, (cfg.max_len, cfg.dim)),
                                 "text.pos_emb")
        self.type_emb = Parameter(rng.normal(0.0, 0.02, (1, cfg.dim)),
                                  "text.type_emb")
        self.ln = LayerNorm(cfg.dim, "text.ln_emb")
        self.blocks = [SelfAttentionBlock(rng, cfg, f"text.block{i}")
                       for i in range(cfg.text_layers)]

    def __call__(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
        if len(ids) == 0:
            return Tensor(np.zeros((0, self.cfg.dim)))
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise VocabError(f"token id outside vocabulary of {self.cfg.vocab_size}")
        if len(ids) > self.cfg.max_len:
            raise DimensionError(f"instruction longer than max_len={self.cfg.max_len}")
        x = (ag.take_rows(self.tok_emb, ids)
             + ag.take_rows(self.pos_emb, np.arange(len(ids)))
             + self.type_emb)
        x = self.ln(x)
        for block in self.blocks:
            x = block(x)
        return x

    def parameters(self):
        out = [self.tok_emb, self.pos_emb, self.type_emb] + self.ln.parameters()
        for b in self.blocks:
            out += b.parameters()
        return out


class PanoEncoder:
    """Contextualizes the K directional views of one panorama."""

    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        self.in_proj = Linear(rng, cfg.obs_dim, cfg.dim, "pano.in_proj")
        self.ang_proj = Linear(rng, 4, cfg.dim, "pano.ang_proj")
        self.ln = LayerNorm(cfg.dim, "pano.ln_emb")
        self.blocks = [SelfAttentionBlock(rng, cfg, f"pano.block{i}")
                       for i in range(cfg.pano_layers)]

    def __call__(self, view_features, view_angles) -> Tensor:
        feats = np.asarray(view_features, dtype=np.float64)
        angles = np.asarray(view_angles, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.cfg.obs_dim:
            raise DimensionError(f"view features must be (K, {self.cfg.obs_dim})")
        if angles.shape != (feats.shape[0], 2):
            raise DimensionError("view angles must be (K, 2) heading/elevation")
        enc = np.stack([np.sin(angles[:, 0]), np.cos(angles[:, 0]),
                        np.sin(angles[:, 1]), np.cos(angles[:, 1])], axis=1)
        x = self.in_proj(ag.as_tensor(feats)) + self.ang_proj(ag.as_tensor(enc))
        x = self.ln(x)
        for block in self.blocks:
            x = block(x)
        return x

    def parameters(self):
        out = self.in_proj.parameters() + self.ang_proj.parameters() + self.ln.parameters()
        for b in self.blocks:
            out += b.parameters()
        return out


class LongTermEncoder:
    """Cross-modal transformer over topological nodes (stop node at index 0)."""

    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        self.loc_proj = Linear(rng, 3, cfg.dim, "long.loc_proj")
        self.step_emb = Parameter(
            rng.normal(0.0, 0.02, (cfg.max_step_embed + 1, cfg.dim)), "long.step_emb")
        self.ln = LayerNorm(cfg.dim, "long.ln_emb")
        self.layers = [CrossModalLayer(rng, cfg, f"long.layer{i}", distance_bias=True)
                       for i in range(cfg.long_layers)]

    def __call__(self, node_features, locations, steps, text: Tensor, affinity):
        feats = np.asarray(node_features, dtype=np.float64)
        steps = np.clip(np.asarray(steps, dtype=np.int64), 0, self.cfg.max_step_embed)
        x = (ag.as_tensor(feats)
             + self.loc_proj(ag.as_tensor(np.asarray(locations, dtype=np.float64)))
             + ag.take_rows(self.step_emb, steps))
        x = self.ln(x)
        for layer in self.layers:
            x, text = layer(x, text, affinity, stop_index=0)
        return x, text

    def parameters(self):
        out = self.loc_proj.parameters() + [self.step_emb] + self.ln.parameters()
        for layer in self.layers:
            out += layer.parameters()
        return out


class ShortTermEncoder:
    """Cross-modal transformer over all metric-map cells."""

    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        self.feat_proj = Linear(rng, cfg.obs_dim, cfg.dim, "short.feat_proj")
        self.polar_proj = Linear(rng, 3, cfg.dim, "short.polar_proj")
        self.nav_proj = Linear(rng, 1, cfg.dim, "short.nav_proj")
        self.mask_emb = Parameter(rng.normal(0.0, 0.02, (1, cfg.dim)),
                                  "short.mask_emb")
        self.ln = LayerNorm(cfg.dim, "short.ln_emb")
        self.layers = [CrossModalLayer(rng, cfg, f"short.layer{i}", distance_bias=False)
                       for i in range(cfg.short_layers)]

    def __call__(self, cell_features, polar, navigable, masked, text: Tensor):
        feats = np.asarray(cell_features, dtype=np.float64)
        if feats.shape[1] != self.cfg.obs_dim:
            raise DimensionError(f"cell features must be (U*V, {self.cfg.obs_dim})")
        mask_col = np.asarray(masked, dtype=np.float64).reshape(-1, 1)
        x = (self.feat_proj(ag.as_tensor(feats))
             + self.polar_proj(ag.as_tensor(np.asarray(polar, dtype=np.float64)))
             + self.nav_proj(ag.as_tensor(
                 np.asarray(navigable, dtype=np.float64).reshape(-1, 1)))
             + ag.as_tensor(mask_col) * self.mask_emb)
        x = self.ln(x)
        for layer in self.layers:
            x, text = layer(x, text)
        return x, text

    def parameters(self):
        out = (self.feat_proj.parameters() + self.polar_proj.parameters()
               + self.nav_proj.parameters() + [self.mask_emb] + self.ln.parameters())
        for layer in self.layers:
            out += layer.parameters()
        return out


@dataclass
class StepEncoding:
    """Everything the loss heads need for one decision step."""

    node_reps: Tensor      # (N, D), stop node at row 0
    cell_reps: Tensor      # (U*V, D)
    text_long: Tensor      # (L, D)
    text_short: Tensor     # (L, D)
    central_index: int     # flat index of the agent cell


class NavModel:
    """Full encoder stack plus prediction heads."""

    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        self.text_encoder = TextEncoder(rng, cfg)
        self.pano_encoder = PanoEncoder(rng, cfg)
        self.long_encoder = LongTermEncoder(rng, cfg)
        self.short_encoder = ShortTermEncoder(rng, cfg)
        self.word_head = Linear(rng, cfg.dim, cfg.vocab_size, "head.word")
        self.node_score = FFNHead(rng, cfg.dim, 1, "head.node_score")
        self.cell_score = FFNHead(rng, cfg.dim, 1, "head.cell_score")
        self.gate = FFNHead(rng, 2 * cfg.dim, 1, "head.gate")
        self.msi_head = FFNHead(rng, cfg.dim, cfg.num_classes, "head.msi")

    def encode_text(self, token_ids) -> Tensor:
        return self.text_encoder(token_ids)

    def encode_pano(self, view_features, view_angles) -> Tensor:
        return self.pano_encoder(view_features, view_angles)

    def encode_step(self, text: Tensor, node_inputs, cell_inputs) -> StepEncoding:
        node_feats, locations, steps, affinity = node_inputs
        cell_feats, polar, nav, masked, central = cell_inputs
        node_reps, text_long = self.long_encoder(
            node_feats, locations, steps, text, affinity)
        cell_reps, text_short = self.short_encoder(
            cell_feats, polar, nav, masked, text)
        return StepEncoding(node_reps, cell_reps, text_long, text_short, central)

    def parameters(self):
        out = (self.text_encoder.parameters() + self.pano_encoder.parameters()
               + self.long_encoder.parameters() + self.short_encoder.parameters()
               + self.word_head.parameters() + self.node_score.parameters()
               + self.cell_score.parameters() + self.gate.parameters()
               + self.msi_head.parameters())
        return out

    def named_parameters(self) -> dict:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def build_model(cfg: EncoderConfig, seed: int) -> NavModel:
    from .seeding import substream
    return NavModel(cfg, substream(seed, "model-init"))

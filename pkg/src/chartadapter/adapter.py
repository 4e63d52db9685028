"""Cross-modal connector between a chart encoder and a language model.

The connector owns four pieces: a linear projector shared between the
forward (visual -> textual) and transposed (textual -> visual) directions,
a bank of learnable latent query vectors, a two-layer ReLU MLP that turns
the queries into attention keys/values, and two independent cross-attention
stacks (an interaction stack driven by projected patch features and a
semantic decoder driven by the latent queries).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor,
    add,
    concat_cols,
    concat_rows,
    gelu,
    layer_norm_rows,
    matmul,
    matmul64,
    normal_init,
    ones_param,
    relu,
    scale,
    slice_cols,
    softmax_rows,
    transpose,
    uniform_fan_in,
    zeros_param,
)

FFN_MULT = 4  # width multiplier of each stack's position-wise feed-forward


@dataclass
class AdapterConfig:
    """Dimensions of the connector.

    d_v: visual feature width produced by the chart encoder
    d_t: internal textual width of the connector
    n_q: number of latent query vectors
    n_layers: attention layers per stack (12 matches a BERT-base-sized stack)
    n_heads: attention heads per layer
    d_hidden_mlp: hidden width of the latent-query MLP
    d_l: embedding width of the downstream language model
    """

    d_v: int = 48
    d_t: int = 64
    n_q: int = 16
    n_layers: int = 2
    n_heads: int = 4
    d_hidden_mlp: int = 128
    d_l: int = 64

    def __post_init__(self):
        for name in ("d_v", "d_t", "n_q", "n_layers", "n_heads", "d_hidden_mlp", "d_l"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_t % self.n_heads != 0:
            raise ConfigError(f"d_t={self.d_t} not divisible by n_heads={self.n_heads}")


class CrossAttentionLayer:
    """One pre-norm cross-attention block: attention, then feed-forward, each with residual."""

    def __init__(self, d_t: int, n_heads: int, rng: np.random.Generator):
        self.d_t = d_t
        self.n_heads = n_heads
        self.d_head = d_t // n_heads
        self.inv_sqrt_d = 1.0 / math.sqrt(self.d_head)
        self.wq = [uniform_fan_in(rng, self.d_head, d_t) for _ in range(n_heads)]
        self.wk = [uniform_fan_in(rng, self.d_head, d_t) for _ in range(n_heads)]
        self.wv = [uniform_fan_in(rng, self.d_head, d_t) for _ in range(n_heads)]
        self.wo = uniform_fan_in(rng, d_t, d_t)
        d_ff = FFN_MULT * d_t
        self.ffn_w1 = uniform_fan_in(rng, d_ff, d_t)
        self.ffn_b1 = zeros_param(1, d_ff)
        self.ffn_w2 = uniform_fan_in(rng, d_t, d_ff)
        self.ffn_b2 = zeros_param(1, d_t)
        self.ln1_gamma = ones_param(1, d_t)
        self.ln1_beta = zeros_param(1, d_t)
        self.ln2_gamma = ones_param(1, d_t)
        self.ln2_beta = zeros_param(1, d_t)

    def attend(self, q: Tensor, kv: Tensor, collect: list | None = None) -> Tensor:
        """Scaled dot-product multi-head cross attention, before residual mixing.

        Per-head projections are applied as one fused matrix product and
        re-split per head.  When ``collect`` is a list, the per-head
        attention-weight matrices (query rows summing to one) are appended.
        """
        d = self.d_head
        qcat = matmul(q, transpose(concat_rows(self.wq)))
        kvcat = matmul(kv, transpose(concat_rows(self.wk + self.wv)))
        heads = []
        for h in range(self.n_heads):
            qh = slice_cols(qcat, h * d, (h + 1) * d)
            kh = slice_cols(kvcat, h * d, (h + 1) * d)
            vh = slice_cols(kvcat, self.d_t + h * d, self.d_t + (h + 1) * d)
            scores = scale(matmul(qh, transpose(kh)), self.inv_sqrt_d)
            weights = softmax_rows(scores)
            if collect is not None:
                collect.append(weights)
            heads.append(matmul64(weights, vh))
        cat = heads[0] if len(heads) == 1 else concat_cols(heads)
        return matmul(cat, transpose(self.wo))

    def _ffn(self, x: Tensor) -> Tensor:
        hidden = gelu(add(matmul(x, transpose(self.ffn_w1)), self.ffn_b1))
        return add(matmul(hidden, transpose(self.ffn_w2)), self.ffn_b2)

    def forward(self, q: Tensor, kv: Tensor, collect: list | None = None) -> Tensor:
        x = layer_norm_rows(add(q, self.attend(q, kv, collect)), self.ln1_gamma, self.ln1_beta)
        return layer_norm_rows(add(x, self._ffn(x)), self.ln2_gamma, self.ln2_beta)

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for h in range(self.n_heads):
            out.append((f"{prefix}.head{h}.wq", self.wq[h]))
            out.append((f"{prefix}.head{h}.wk", self.wk[h]))
            out.append((f"{prefix}.head{h}.wv", self.wv[h]))
        out.extend([
            (f"{prefix}.wo", self.wo),
            (f"{prefix}.ffn_w1", self.ffn_w1),
            (f"{prefix}.ffn_b1", self.ffn_b1),
            (f"{prefix}.ffn_w2", self.ffn_w2),
            (f"{prefix}.ffn_b2", self.ffn_b2),
            (f"{prefix}.ln1_gamma", self.ln1_gamma),
            (f"{prefix}.ln1_beta", self.ln1_beta),
            (f"{prefix}.ln2_gamma", self.ln2_gamma),
            (f"{prefix}.ln2_beta", self.ln2_beta),
        ])
        return out


class AttentionStack:
    """A pile of cross-attention layers; queries evolve, keys/values stay fixed."""

    def __init__(self, d_t: int, n_heads: int, n_layers: int, rng: np.random.Generator):
        self.layers = [CrossAttentionLayer(d_t, n_heads, rng) for _ in range(n_layers)]

    def forward(self, q: Tensor, kv: Tensor, collect: list | None = None) -> Tensor:
        for layer in self.layers:
            q = layer.forward(q, kv, collect)
        return q

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"{prefix}.layer{i}"))
        return out


class LatentMLP:
    """Two-layer ReLU MLP applied row-wise to the latent queries."""

    def __init__(self, d_t: int, d_hidden: int, rng: np.random.Generator):
        self.w2 = uniform_fan_in(rng, d_hidden, d_t)
        self.b2 = zeros_param(1, d_hidden)
        self.w1 = uniform_fan_in(rng, d_t, d_hidden)
        self.b1 = zeros_param(1, d_t)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


class AdapterParams:
    """All trainable state of the connector, organized by parameter group."""

    def __init__(self, cfg: AdapterConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.projector = normal_init(rng, cfg.d_t, cfg.d_v)  # one shared matrix, used forward and transposed
        self.latent_queries = normal_init(rng, cfg.n_q, cfg.d_t)
        self.mlp = LatentMLP(cfg.d_t, cfg.d_hidden_mlp, rng)
        self.interaction = AttentionStack(cfg.d_t, cfg.n_heads, cfg.n_layers, rng)
        self.decoder = AttentionStack(cfg.d_t, cfg.n_heads, cfg.n_layers, rng)

    def groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        return {
            "projector": [("M", self.projector)],
            "latent_queries": [("mu", self.latent_queries)],
            "latent_mlp": self.mlp.named_parameters(),
            "interaction_stack": self.interaction.named_parameters("interaction"),
            "decoder_stack": self.decoder.named_parameters("decoder"),
        }


@dataclass
class AdapterOutput:
    """All intermediates of one connector pass, for inspection and tests."""

    g: Tensor  # projected patch features, n_patches x d_t
    h: Tensor  # interaction output, n_patches x d_t
    e: Tensor  # decoded semantics, n_q x d_t
    r: Tensor  # back-projected semantics, n_q x d_v
    interaction_attention: list = field(default_factory=list)
    decoder_attention: list = field(default_factory=list)


def project(x: Tensor, projector: Tensor) -> Tensor:
    """Map patch rows from visual width d_v into textual width d_t."""
    if x.shape[1] != projector.shape[1]:
        raise ShapeError(
            f"project: features are {x.shape} but projector expects width {projector.shape[1]}"
        )
    return matmul(x, transpose(projector))


def inverse_project(e: Tensor, projector: Tensor) -> Tensor:
    """Map decoded rows back into visual width via the transposed projector."""
    if e.shape[1] != projector.shape[0]:
        raise ShapeError(
            f"inverse_project: rows are {e.shape} but projector expects width {projector.shape[0]}"
        )
    return matmul(e, projector)


def latent_transform(latent_queries: Tensor, mlp: LatentMLP) -> Tensor:
    """Inner layer first, outer layer second, each followed by ReLU."""
    inner = relu(add(matmul(latent_queries, transpose(mlp.w2)), mlp.b2))
    return relu(add(matmul(inner, transpose(mlp.w1)), mlp.b1))


def cross_modal_interact(g: Tensor, sigma: Tensor, stack: AttentionStack,
                         collect: list | None = None) -> Tensor:
    """Attend from projected patch rows onto the transformed latent queries."""
    if g.shape[1] != sigma.shape[1]:
        raise ShapeError(f"interaction width mismatch: {g.shape} vs {sigma.shape}")
    return stack.forward(g, sigma, collect)


def semantic_decode(latent_queries: Tensor, h: Tensor, stack: AttentionStack,
                    collect: list | None = None) -> Tensor:
    """Attend from the latent queries onto the interaction output."""
    if latent_queries.shape[1] != h.shape[1]:
        raise ShapeError(f"decoder width mismatch: {latent_queries.shape} vs {h.shape}")
    return stack.forward(latent_queries, h, collect)


def adapter_forward(x: Tensor, params: AdapterParams,
                    collect_attention: bool = False) -> AdapterOutput:
    """Full connector pass over n_patches x d_v chart features."""
    inter_attn: list | None = [] if collect_attention else None
    dec_attn: list | None = [] if collect_attention else None
    g = project(x, params.projector)
    sigma = latent_transform(params.latent_queries, params.mlp)
    h = cross_modal_interact(g, sigma, params.interaction, inter_attn)
    e = semantic_decode(params.latent_queries, h, params.decoder, dec_attn)
    r = inverse_project(e, params.projector)
    return AdapterOutput(g=g, h=h, e=e, r=r,
                         interaction_attention=inter_attn or [],
                         decoder_attention=dec_attn or [])

"""The full chart summarizer: encoder config, connector, projections, LM.

Parameters are organized into named groups so training stages can freeze
and thaw them wholesale; the same group names key the checkpoint format.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .adapter import AdapterOutput, AdapterParams, adapter_forward
from .backbone import (
    ChartEncoderConfig,
    PrefixComposition,
    TinyLM,
    Tokenizer,
    compose_input,
    encode_chart,
    generate_greedy,
    lm_loss,
    summary_input_ids,
)
from .config import RunConfig, rng_for
from .data import ChartSpec, build_vocabulary
from .errors import ConfigError
from .tensor import (
    Tensor,
    add,
    constant,
    embedding_lookup,
    matmul,
    no_grad,
    scale,
    transpose,
    uniform_fan_in,
    zeros_param,
)

GROUP_NAMES = (
    "projector",
    "latent_queries",
    "latent_mlp",
    "interaction_stack",
    "decoder_stack",
    "lm",
    "prefix_projections",
    "text_contrast_head",
)


class ChartSummarizer:
    def __init__(self, cfg: RunConfig, tokenizer: Tokenizer, adapter: AdapterParams,
                 lm: TinyLM, prefix: PrefixComposition,
                 text_head_w: Tensor, text_head_b: Tensor):
        self.cfg = cfg
        self.encoder_cfg: ChartEncoderConfig = cfg.encoder_config()
        self.tokenizer = tokenizer
        self.adapter = adapter
        self.lm = lm
        self.prefix = prefix
        self.text_head_w = text_head_w
        self.text_head_b = text_head_b
        self.prompt_ids = [tokenizer.chart_id] + tokenizer.encode(cfg.prompt)
        self._trainable: set[str] = set(GROUP_NAMES)

    @classmethod
    def create(cls, cfg: RunConfig, rng: np.random.Generator | None = None) -> "ChartSummarizer":
        rng = rng if rng is not None else rng_for(cfg.seed, "init")
        tokenizer = Tokenizer(build_vocabulary())
        adapter = AdapterParams(cfg.adapter_config(), rng)
        lm = TinyLM(cfg.lm_config(tokenizer.vocab_size), rng)
        prefix = PrefixComposition(cfg.d_l, cfg.d_v, cfg.d_t, rng)
        text_head_w = uniform_fan_in(rng, cfg.d_t, cfg.d_l)
        text_head_b = zeros_param(1, cfg.d_t)
        return cls(cfg, tokenizer, adapter, lm, prefix, text_head_w, text_head_b)

    # -- parameter bookkeeping ------------------------------------------------

    def parameter_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        groups = dict(self.adapter.groups())
        groups["lm"] = self.lm.named_parameters()
        groups["prefix_projections"] = self.prefix.named_parameters()
        groups["text_contrast_head"] = [("w", self.text_head_w), ("b", self.text_head_b)]
        return groups

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for group, params in self.parameter_groups().items():
            out.extend((f"{group}.{name}", t) for name, t in params)
        return out

    def set_trainable(self, group_names) -> None:
        names = set(group_names)
        unknown = names - set(GROUP_NAMES)
        if unknown:
            raise ConfigError(f"unknown parameter groups: {sorted(unknown)}")
        self._trainable = names
        for group, params in self.parameter_groups().items():
            flag = group in names
            for _, t in params:
                t.requires_grad = flag

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for group, params in self.parameter_groups().items():
            if group in self._trainable:
                out.extend((f"{group}.{name}", t) for name, t in params)
        return out

    def group_hashes(self) -> dict[str, str]:
        """SHA-256 over each group's concatenated parameter bytes."""
        out = {}
        for group, params in self.parameter_groups().items():
            digest = hashlib.sha256()
            for name, t in sorted(params, key=lambda p: p[0]):
                digest.update(name.encode("utf-8"))
                digest.update(t.data.tobytes())
            out[group] = digest.hexdigest()
        return out

    # -- forward paths ---------------------------------------------------------

    def chart_features(self, spec: ChartSpec) -> Tensor:
        return encode_chart(spec, self.encoder_cfg)

    def adapter_outputs(self, spec: ChartSpec, collect_attention: bool = False) -> AdapterOutput:
        return adapter_forward(self.chart_features(spec), self.adapter, collect_attention)

    def _compose_for_targets(self, spec: ChartSpec, target_ids):
        out = self.adapter_outputs(spec)
        composed, prefix_len = compose_input(
            self.prompt_ids, out.r, out.g, self.prefix, self.lm,
            summary_input_ids(target_ids))
        return composed, prefix_len

    def sample_loss(self, sample) -> Tensor:
        target_ids = self.tokenizer.encode(sample.summary) + [self.tokenizer.eos_id]
        composed, prefix_len = self._compose_for_targets(sample.spec, target_ids)
        return lm_loss(self.lm, composed, prefix_len, target_ids)

    def sample_token_counts(self, sample) -> tuple[int, int]:
        """(correct, total) greedy next-token predictions over summary positions."""
        target_ids = self.tokenizer.encode(sample.summary) + [self.tokenizer.eos_id]
        with no_grad():
            composed, prefix_len = self._compose_for_targets(sample.spec, target_ids)
            logits = self.lm.logits(self.lm.forward_hidden(composed))
        pred = logits.data[prefix_len:].argmax(axis=1)
        correct = int((pred == np.asarray(target_ids)).sum())
        return correct, len(target_ids)

    def greedy_summary(self, spec: ChartSpec, max_len: int = 64) -> str:
        with no_grad():
            out = self.adapter_outputs(spec)
            prompt_emb = embedding_lookup(self.lm.tok_emb, self.prompt_ids)
            r_emb = matmul(out.r, transpose(self.prefix.w_r))
            g_emb = matmul(out.g, transpose(self.prefix.w_g))
            from .tensor import concat_rows

            prefix = concat_rows([prompt_emb, r_emb, g_emb])
            ids = generate_greedy(self.lm, prefix, max_len)
        return self.tokenizer.decode(ids)

    # -- pooled embeddings for contrastive alignment ---------------------------

    def chart_embedding(self, spec: ChartSpec) -> Tensor:
        """Mean of projected patch rows, 1 x d_t."""
        from .adapter import project

        g = project(self.chart_features(spec), self.adapter.projector)
        ones = constant(np.ones((1, g.shape[0]), dtype=np.float32))
        return scale(matmul(ones, g), 1.0 / g.shape[0])

    def text_embedding(self, summary: str) -> Tensor:
        """Mean summary token embedding mapped into d_t by the contrast head."""
        ids = self.tokenizer.encode(summary)
        emb = embedding_lookup(self.lm.tok_emb, ids)
        ones = constant(np.ones((1, emb.shape[0]), dtype=np.float32))
        pooled = scale(matmul(ones, emb), 1.0 / emb.shape[0])
        return add(matmul(pooled, transpose(self.text_head_w)), self.text_head_b)

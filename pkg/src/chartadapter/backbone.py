"""Toy chart encoder and a small decoder-only language model.

The encoder turns a chart spec into one deterministic feature row per data
point (value channels, chart-type one-hot, position, and hashed text
channels for category labels, value words, and title words).  The language
model is a standard pre-norm causal transformer over a closed word-level
vocabulary; chart context enters as projected prefix rows ahead of the
summary tokens.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ChartSpec
from .errors import ConfigError, ContractError, DataError, SequenceLengthError, ShapeError
from .tensor import (
    Tensor,
    add,
    concat_cols,
    concat_rows,
    constant,
    embedding_lookup,
    gelu,
    layer_norm_rows,
    matmul,
    matmul64,
    no_grad,
    normal_init,
    ones_param,
    scale,
    slice_cols,
    softmax_rows,
    transpose,
    uniform_fan_in,
    zeros_param,
)

# ---------------------------------------------------------------------------
# tokenizer


class Tokenizer:
    """Word-level tokenizer over a fixed vocabulary with leading special ids."""

    SPECIALS = ("<pad>", "<bos>", "<eos>", "<chart>", "<unk>")

    def __init__(self, words: list[str]):
        seen = set(self.SPECIALS)
        deduped = []
        for w in words:
            if w in seen:
                continue
            seen.add(w)
            deduped.append(w)
        self.tokens = list(self.SPECIALS) + deduped
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}

    pad_id = 0
    bos_id = 1
    eos_id = 2
    chart_id = 3
    unk_id = 4

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self.ids.get(w, self.unk_id) for w in text.split()]

    def decode(self, ids, skip_special: bool = True) -> str:
        words = []
        for i in ids:
            tok = self.tokens[int(i)]
            if skip_special and int(i) < len(self.SPECIALS):
                continue
            words.append(tok)
        return " ".join(words)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Tokenizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(cls.SPECIALS)]) != cls.SPECIALS:
            raise DataError(f"{path}: vocabulary file must start with {cls.SPECIALS}")
        return cls(lines[len(cls.SPECIALS):])


# ---------------------------------------------------------------------------
# chart encoder

_N_FIXED_CHANNELS = 7  # 2 value + 3 type one-hot + 2 position


@dataclass
class ChartEncoderConfig:
    d_v: int = 48
    max_patches: int = 16

    def __post_init__(self):
        if self.d_v < _N_FIXED_CHANNELS + 3:
            raise ConfigError(f"d_v must be >= {_N_FIXED_CHANNELS + 3}, got {self.d_v}")
        if self.max_patches < 1:
            raise ConfigError("max_patches must be >= 1")


def _hashed_features(text: str, dims: int) -> np.ndarray:
    """Deterministic pseudo-random unit-scale features for a string."""
    out = np.empty(dims, dtype=np.float32)
    filled = 0
    block = 0
    while filled < dims:
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=32,
                                 salt=block.to_bytes(8, "little")).digest()
        vals = np.frombuffer(digest, dtype=np.uint16).astype(np.float32)
        vals = vals / 32768.0 - 1.0
        take = min(dims - filled, vals.size)
        out[filled:filled + take] = vals[:take]
        filled += take
        block += 1
    return out


def encode_chart(spec: ChartSpec, cfg: ChartEncoderConfig) -> Tensor:
    """One feature row per data point, truncated to ``max_patches`` rows.

    Identical specs produce bit-identical features.  The hashed channels use
    a keyed hash of the category label, the value word, and the title, so
    textually distinct charts land on distinct feature rows.
    """
    spec.validate()
    n_hash = cfg.d_v - _N_FIXED_CHANNELS
    k_label = (n_hash + 2) // 3
    k_value = (n_hash - k_label + 1) // 2
    k_title = n_hash - k_label - k_value
    title_feat = _hashed_features(spec.title, k_title)
    type_onehot = np.zeros(3, dtype=np.float32)
    type_onehot[("bar", "line", "pie").index(spec.chart_type)] = 1.0
    all_values = [v for s in spec.series for v in s]
    vmax = max(abs(v) for v in all_values) + 1e-6
    n_cat = len(spec.categories)
    rows = []
    for s_idx, series in enumerate(spec.series):
        for i, v in enumerate(series):
            row = np.empty(cfg.d_v, dtype=np.float32)
            row[0] = v / vmax
            row[1] = v / 100.0
            row[2:5] = type_onehot
            row[5] = i / max(n_cat - 1, 1)
            row[6] = float(s_idx)
            off = _N_FIXED_CHANNELS
            row[off:off + k_label] = _hashed_features(spec.categories[i], k_label)
            row[off + k_label:off + k_label + k_value] = _hashed_features(f"{v:g}", k_value)
            row[off + k_label + k_value:] = title_feat
            rows.append(row)
            if len(rows) == cfg.max_patches:
                return constant(np.stack(rows))
    return constant(np.stack(rows))


# ---------------------------------------------------------------------------
# language model


@dataclass
class LMConfig:
    vocab_size: int
    d_l: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq: int = 128

    def __post_init__(self):
        if self.d_l % self.n_heads != 0:
            raise ConfigError(f"d_l={self.d_l} not divisible by n_heads={self.n_heads}")
        for name in ("vocab_size", "d_l", "n_blocks", "n_heads", "d_ff", "max_seq"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


class DecoderBlock:
    """Pre-norm causal self-attention block with a GELU feed-forward."""

    def __init__(self, cfg: LMConfig, rng: np.random.Generator):
        d, h = cfg.d_l, cfg.n_heads
        self.n_heads = h
        self.d_head = d // h
        self.inv_sqrt_d = 1.0 / math.sqrt(self.d_head)
        self.wq = [uniform_fan_in(rng, self.d_head, d) for _ in range(h)]
        self.wk = [uniform_fan_in(rng, self.d_head, d) for _ in range(h)]
        self.wv = [uniform_fan_in(rng, self.d_head, d) for _ in range(h)]
        self.wo = uniform_fan_in(rng, d, d)
        self.ffn_w1 = uniform_fan_in(rng, cfg.d_ff, d)
        self.ffn_b1 = zeros_param(1, cfg.d_ff)
        self.ffn_w2 = uniform_fan_in(rng, d, cfg.d_ff)
        self.ffn_b2 = zeros_param(1, d)
        self.ln1_gamma = ones_param(1, d)
        self.ln1_beta = zeros_param(1, d)
        self.ln2_gamma = ones_param(1, d)
        self.ln2_beta = zeros_param(1, d)

    def _attention(self, x: Tensor, mask: Tensor) -> Tensor:
        d = self.d_head
        n_heads = self.n_heads
        d_l = d * n_heads
        qkv = matmul(x, transpose(concat_rows(self.wq + self.wk + self.wv)))
        heads = []
        for h in range(n_heads):
            qh = slice_cols(qkv, h * d, (h + 1) * d)
            kh = slice_cols(qkv, d_l + h * d, d_l + (h + 1) * d)
            vh = slice_cols(qkv, 2 * d_l + h * d, 2 * d_l + (h + 1) * d)
            scores = add(scale(matmul(qh, transpose(kh)), self.inv_sqrt_d), mask)
            heads.append(matmul64(softmax_rows(scores), vh))
        cat = heads[0] if len(heads) == 1 else concat_cols(heads)
        return matmul(cat, transpose(self.wo))

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        x = add(x, self._attention(layer_norm_rows(x, self.ln1_gamma, self.ln1_beta), mask))
        hidden = gelu(add(matmul(layer_norm_rows(x, self.ln2_gamma, self.ln2_beta),
                                 transpose(self.ffn_w1)), self.ffn_b1))
        return add(x, add(matmul(hidden, transpose(self.ffn_w2)), self.ffn_b2))

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


_MASK_CACHE: dict[tuple[int, str], Tensor] = {}


def _causal_mask(n: int) -> Tensor:
    from .tensor import storage_dtype

    key = (n, np.dtype(storage_dtype()).name)
    cached = _MASK_CACHE.get(key)
    if cached is None:
        cached = constant(np.triu(np.full((n, n), -1e9), k=1))
        _MASK_CACHE[key] = cached
    return cached


class TinyLM:
    """Decoder-only transformer with learned positions and an untied output head."""

    def __init__(self, cfg: LMConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.tok_emb = normal_init(rng, cfg.vocab_size, cfg.d_l)
        self.pos_emb = normal_init(rng, cfg.max_seq, cfg.d_l)
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.n_blocks)]
        self.final_gamma = ones_param(1, cfg.d_l)
        self.final_beta = zeros_param(1, cfg.d_l)
        self.head_w = uniform_fan_in(rng, cfg.vocab_size, cfg.d_l)

    def forward_hidden(self, x: Tensor) -> Tensor:
        """Run the blocks over an already-positioned embedding sequence."""
        mask = _causal_mask(x.shape[0])
        for block in self.blocks:
            x = block.forward(x, mask)
        return layer_norm_rows(x, self.final_gamma, self.final_beta)

    def logits(self, hidden: Tensor) -> Tensor:
        return matmul(hidden, transpose(self.head_w))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("tok_emb", self.tok_emb), ("pos_emb", self.pos_emb)]
        for i, block in enumerate(self.blocks):
            out.extend(block.named_parameters(f"block{i}"))
        out.extend([
            ("final_gamma", self.final_gamma),
            ("final_beta", self.final_beta),
            ("head_w", self.head_w),
        ])
        return out


class PrefixComposition:
    """Learned input projections that lift connector outputs into LM width."""

    def __init__(self, d_l: int, d_v: int, d_t: int, rng: np.random.Generator):
        self.w_r = uniform_fan_in(rng, d_l, d_v)
        self.w_g = uniform_fan_in(rng, d_l, d_t)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [("w_r", self.w_r), ("w_g", self.w_g)]


def compose_input(p_ids, r: Tensor | None, g: Tensor | None,
                  comp: PrefixComposition, lm: TinyLM,
                  summary_input_ids=None) -> tuple[Tensor, int]:
    """Build the LM input sequence: prompt tokens, projected semantic rows,
    projected patch rows, then summary token embeddings, with positions
    added over the whole composed sequence.

    Returns the positioned embedding sequence and the prefix length (the
    number of positions before the summary segment).  Segments may be
    omitted by passing an empty id list or None.
    """
    segments = []
    prefix_len = 0
    if p_ids is not None and len(p_ids) > 0:
        segments.append(embedding_lookup(lm.tok_emb, p_ids))
        prefix_len += len(p_ids)
    if r is not None:
        segments.append(matmul(r, transpose(comp.w_r)))
        prefix_len += r.shape[0]
    if g is not None:
        segments.append(matmul(g, transpose(comp.w_g)))
        prefix_len += g.shape[0]
    if summary_input_ids is not None and len(summary_input_ids) > 0:
        segments.append(embedding_lookup(lm.tok_emb, summary_input_ids))
    if not segments:
        raise ContractError("compose_input: all segments are empty")
    x = concat_rows(segments)
    n = x.shape[0]
    if n > lm.cfg.max_seq:
        raise SequenceLengthError(
            f"composed length {n} exceeds positional capacity {lm.cfg.max_seq}"
        )
    return add(x, embedding_lookup(lm.pos_emb, np.arange(n))), prefix_len


def lm_loss(lm: TinyLM, composed: Tensor, prefix_len: int, target_ids) -> Tensor:
    """Mean next-token cross entropy over summary positions only.

    ``composed`` must carry the teacher-forced summary segment
    (<bos> then all but the last target token); prefix positions are
    excluded from the loss via the ignore index.
    """
    targets = list(target_ids)
    if not targets:
        raise ContractError("lm_loss: empty target summary")
    if targets[-1] != Tokenizer.eos_id:
        raise ContractError("lm_loss: target summary must end with <eos>")
    n = composed.shape[0]
    if prefix_len + len(targets) != n:
        raise ShapeError(
            f"composed length {n} != prefix {prefix_len} + targets {len(targets)}"
        )
    full = np.full(n, -1, dtype=np.int64)
    full[prefix_len:] = targets
    logits = lm.logits(lm.forward_hidden(composed))
    from .tensor import cross_entropy_logits

    return cross_entropy_logits(logits, full, ignore_index=-1)


def summary_input_ids(target_ids) -> list[int]:
    """Teacher-forcing input segment for a target that ends with <eos>."""
    return [Tokenizer.bos_id] + list(target_ids[:-1])


def generate_greedy(lm: TinyLM, prefix: Tensor, max_len: int) -> list[int]:
    """Greedy decoding from <bos> after an unpositioned prefix sequence.

    Stops at <eos> or after ``max_len`` generated tokens; the returned ids
    include the terminating <eos> when one is produced.
    """
    if max_len < 1:
        raise ContractError("generate_greedy: max_len must be >= 1")
    out: list[int] = []
    with no_grad():
        ids = [Tokenizer.bos_id]
        for _ in range(max_len):
            seq = concat_rows([prefix, embedding_lookup(lm.tok_emb, ids)])
            n = seq.shape[0]
            if n > lm.cfg.max_seq:
                raise SequenceLengthError(
                    f"generation reached positional capacity {lm.cfg.max_seq}"
                )
            x = add(seq, embedding_lookup(lm.pos_emb, np.arange(n)))
            logits = lm.logits(lm.forward_hidden(x))
            nxt = int(np.argmax(logits.data[-1]))
            out.append(nxt)
            if nxt == Tokenizer.eos_id:
                break
            ids.append(nxt)
    return out

"""Contrastive alignment of the cross-modal projector, plus its retrieval metrics.

Charts and summaries are pooled into one embedding each; a symmetric
in-batch softmax loss pulls matching pairs together.  Retrieval quality is
scored on the batch similarity matrix with diagonal entries as positives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .model import ChartSummarizer
from .tensor import (
    Tensor,
    add,
    backward,
    concat_rows,
    cross_entropy_logits,
    l2_normalize_rows,
    matmul,
    no_grad,
    reset_tape,
    scale,
    transpose,
)
from .training import Adam, STAGE1_GROUPS, StagePlan, TrainReport

TEMPERATURE = 0.07  # fixed softmax temperature for the alignment loss
DEFAULT_THRESHOLD = 0.5  # decision threshold on normalized similarity


@dataclass
class ContrastiveBatch:
    chart_embeddings: Tensor  # B x d_t, pooled projected patch rows
    text_embeddings: Tensor   # B x d_t, pooled summary embeddings through the head

    def __post_init__(self):
        c, t = self.chart_embeddings.shape, self.text_embeddings.shape
        if c != t:
            raise ShapeError(f"batch sides disagree: {c} vs {t}")
        if c[0] < 2:
            raise ContractError("contrastive batch needs B >= 2")


def info_nce_loss(batch: ContrastiveBatch, temperature: float) -> Tensor:
    """Symmetric in-batch classification of the matching pair.

    Both sides are L2-normalized, similarities are divided by the
    temperature, and row-wise plus column-wise cross entropy against the
    diagonal is averaged.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    charts = l2_normalize_rows(batch.chart_embeddings)
    texts = l2_normalize_rows(batch.text_embeddings)
    sims = scale(matmul(charts, transpose(texts)), 1.0 / temperature)
    targets = np.arange(sims.shape[0])
    by_chart = cross_entropy_logits(sims, targets)
    by_text = cross_entropy_logits(transpose(sims), targets)
    return scale(add(by_chart, by_text), 0.5)


def retrieval_binary_metrics(scores, threshold: float = DEFAULT_THRESHOLD) -> dict[str, float]:
    """Binary pair-classification metrics over a B x B similarity matrix.

    Diagonal entries are positives, off-diagonal entries negatives.  AUC is
    the rank statistic (ties count half) and needs no threshold; accuracy,
    precision, recall, and f1 call a pair positive when its score is >= the
    threshold.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 2:
        raise ContractError(f"scores must be square with B >= 2, got {s.shape}")
    b = s.shape[0]
    diag_mask = np.eye(b, dtype=bool)
    pos = s[diag_mask]
    neg = s[~diag_mask]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    auc = (wins + 0.5 * ties) / (pos.size * neg.size)
    pred = s >= threshold
    tp = int((pred & diag_mask).sum())
    fp = int((pred & ~diag_mask).sum())
    fn = int((~pred & diag_mask).sum())
    tn = int((~pred & ~diag_mask).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "auc": float(auc),
        "accuracy": (tp + tn) / (b * b),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def _batch_embeddings(model: ChartSummarizer, batch) -> ContrastiveBatch:
    charts = concat_rows([model.chart_embedding(s.spec) for s in batch])
    texts = concat_rows([model.text_embedding(s.summary) for s in batch])
    return ContrastiveBatch(chart_embeddings=charts, text_embeddings=texts)


def retrieval_eval(model: ChartSummarizer, samples, batch_size: int,
                   threshold: float = DEFAULT_THRESHOLD) -> dict[str, float]:
    """Average retrieval metrics over consecutive full batches."""
    totals: dict[str, float] = {}
    n_batches = 0
    with no_grad():
        for start in range(0, len(samples) - 1, batch_size):
            batch = samples[start:start + batch_size]
            if len(batch) < 2:
                continue
            emb = _batch_embeddings(model, batch)
            charts = emb.chart_embeddings.data.astype(np.float64)
            texts = emb.text_embeddings.data.astype(np.float64)
            charts /= np.linalg.norm(charts, axis=1, keepdims=True)
            texts /= np.linalg.norm(texts, axis=1, keepdims=True)
            metrics = retrieval_binary_metrics(charts @ texts.T, threshold)
            for key, value in metrics.items():
                totals[key] = totals.get(key, 0.0) + value
            n_batches += 1
    if n_batches == 0:
        raise ContractError("not enough samples for a retrieval batch")
    return {k: v / n_batches for k, v in totals.items()}


def run_stage1(model: ChartSummarizer, samples, plan: StagePlan,
               shuffle_rng: np.random.Generator) -> TrainReport:
    """Optimize the projector (and the text pooling head) contrastively.

    Every other parameter group is bit-identical before and after.
    """
    if plan.stage != 1 or set(plan.groups) != set(STAGE1_GROUPS):
        raise ContractError("plan does not match the stage-1 trainable set")
    if len(samples) < 2:
        raise ContractError("contrastive stage needs at least two samples")
    model.set_trainable(plan.groups)
    hashes_before = model.group_hashes()
    adam = Adam(model.trainable_parameters(), lr=plan.lr, grad_clip=plan.grad_clip)
    batch_size = min(plan.batch_size, len(samples))
    losses: list[float] = []
    done = False
    for _ in range(plan.epochs):
        order = shuffle_rng.permutation(len(samples))
        for start in range(0, len(order), batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            if len(batch) < 2:
                continue
            reset_tape()
            adam.zero_grad()
            loss = info_nce_loss(_batch_embeddings(model, batch), TEMPERATURE)
            backward(loss)
            adam.step()
            losses.append(loss.item())
            if plan.max_steps is not None and len(losses) >= plan.max_steps:
                done = True
                break
        if done:
            break
    retrieval = retrieval_eval(model, samples, batch_size)
    return TrainReport(stage=1, losses=losses, steps=len(losses),
                       trainable=sorted(plan.groups),
                       hashes_before=hashes_before,
                       hashes_after=model.group_hashes(),
                       retrieval=retrieval)

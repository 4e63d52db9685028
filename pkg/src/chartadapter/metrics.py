"""Corpus BLEU-4 and ROUGE-1/2/L, written from scratch.

BLEU is corpus-level: clipped n-gram matches are pooled over the corpus,
the four precisions enter a geometric mean, and a brevity penalty applies
when the candidate corpus is shorter than the reference corpus.  Zero
precisions are floored at 1e-9 so short corpora score nonzero.  ROUGE
scores report F1 (the single-number convention; noted in the report).
"""

from __future__ import annotations

import json
import math
import os
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ContractError

BLEU_EPS = 1e-9

_PUNCT = re.compile(r"([.,!?;:()\"'])")


def tokenize(text: str) -> list[str]:
    """Lowercase, detach punctuation, split on whitespace."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates: list[list[str]], references: list[list[str]]) -> float:
    """Corpus BLEU with n = 1..4, clipping, brevity penalty, epsilon floor."""
    if not candidates:
        raise ContractError("bleu4 needs at least one candidate")
    if len(candidates) != len(references):
        raise ContractError(
            f"bleu4: {len(candidates)} candidates vs {len(references)} references")
    matches = [0] * 5
    guesses = [0] * 5
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            c_counts = _ngram_counts(cand, n)
            r_counts = _ngram_counts(ref, n)
            guesses[n] += sum(c_counts.values())
            matches[n] += sum(min(count, r_counts[gram])
                              for gram, count in c_counts.items())
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        p = matches[n] / guesses[n] if guesses[n] > 0 and matches[n] > 0 else BLEU_EPS
        log_sum += math.log(p)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum / 4.0)


def rouge_n(candidate: list[str], reference: list[str], n: int) -> dict[str, float]:
    """Clipped n-gram overlap: recall over the reference, precision over the candidate."""
    if n < 1:
        raise ContractError("rouge_n needs n >= 1")
    c_counts = _ngram_counts(candidate, n)
    r_counts = _ngram_counts(reference, n)
    overlap = sum(min(count, r_counts[gram]) for gram, count in c_counts.items())
    c_total = sum(c_counts.values())
    r_total = sum(r_counts.values())
    recall = overlap / r_total if r_total else 0.0
    precision = overlap / c_total if c_total else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return {"recall": recall, "precision": precision, "f1": f1}


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> dict[str, float]:
    """Longest-common-subsequence recall, precision, and F1."""
    lcs = _lcs_length(candidate, reference)
    recall = lcs / len(reference) if reference else 0.0
    precision = lcs / len(candidate) if candidate else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if precision + recall else 0.0
    return {"recall": recall, "precision": precision, "f1": f1}


@dataclass
class EvalReport:
    """Text metrics for one model snapshot, serializable as a single JSON document."""

    bleu4: float
    rouge1: float
    rouge2: float
    rougeL: float
    n_samples: int
    rouge_variant: str = "f1"
    variant: str | None = None
    contrastive: dict | None = None
    per_sample: list | None = None

    def __post_init__(self):
        for name in ("bleu4", "rouge1", "rouge2", "rougeL"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ContractError(f"{name}={value} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def evaluate_corpus(model, samples, max_len: int = 64,
                    keep_per_sample: bool = False) -> EvalReport:
    """Greedy-decode every sample and aggregate BLEU-4 plus macro-F1 ROUGE.

    Decoding parallelizes over samples when CADPT_THREADS > 1.
    """
    if not samples:
        raise ContractError("evaluate_corpus needs at least one sample")
    threads = int(os.environ.get("CADPT_THREADS", "1") or "1")

    def decode(sample):
        return model.greedy_summary(sample.spec, max_len)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            hyps = list(pool.map(decode, samples))
    else:
        hyps = [decode(s) for s in samples]
    cand_tokens = [tokenize(h) for h in hyps]
    ref_tokens = [tokenize(s.summary) for s in samples]
    r1 = r2 = rl = 0.0
    per_sample = []
    for cand, ref, sample, hyp in zip(cand_tokens, ref_tokens, samples, hyps):
        s1 = rouge_n(cand, ref, 1)["f1"]
        s2 = rouge_n(cand, ref, 2)["f1"]
        sl = rouge_l(cand, ref)["f1"]
        r1 += s1
        r2 += s2
        rl += sl
        if keep_per_sample:
            per_sample.append({"id": sample.id, "hypothesis": hyp,
                               "rouge1": s1, "rouge2": s2, "rougeL": sl})
    n = len(samples)
    return EvalReport(
        bleu4=bleu4(cand_tokens, ref_tokens),
        rouge1=r1 / n, rouge2=r2 / n, rougeL=rl / n,
        n_samples=n,
        per_sample=per_sample if keep_per_sample else None,
    )


def format_ablation_table(reports: list[EvalReport]) -> str:
    """Fixed-width text table, one row per variant."""
    header = f"{'variant':<12} {'bleu4':>8} {'rouge1':>8} {'rouge2':>8} {'rougeL':>8}"
    rows = [header, "-" * len(header)]
    for r in reports:
        rows.append(f"{(r.variant or '?'):<12} {r.bleu4:>8.4f} {r.rouge1:>8.4f} "
                    f"{r.rouge2:>8.4f} {r.rougeL:>8.4f}")
    return "\n".join(rows)

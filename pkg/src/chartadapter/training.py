"""Three-stage hierarchical trainer: parameter-group freezing, Adam, ablations.

Stage 1 aligns the projector contrastively, stage 2 trains the whole
connector against a frozen language model, stage 3 fine-tunes connector and
language model jointly.  Ablation variants skip stages or override which
groups a stage may update; everything outside a stage's trainable set stays
bit-identical across that stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig, StageSettings, rng_for
from .errors import ContractError, NumericError
from .metrics import EvalReport, evaluate_corpus
from .model import ChartSummarizer
from .tensor import Tensor, add, backward, reset_tape, scale

STAGE1_GROUPS = ("projector", "text_contrast_head")
STAGE2_GROUPS = ("projector", "latent_queries", "latent_mlp",
                 "interaction_stack", "decoder_stack", "prefix_projections")
STAGE3_GROUPS = STAGE2_GROUPS + ("lm",)
# Restriction sets for the partial-update variants: each stage trains its
# standard set intersected with the restriction, so a variant can never
# thaw something its stage would have kept frozen.
CHA_GROUPS = ("projector", "latent_queries", "latent_mlp",
              "interaction_stack", "decoder_stack")
LLM_ONLY_GROUPS = ("latent_queries", "lm")

VARIANTS = ("full", "no_stage1", "no_stage2", "cha_only", "llm_only")


@dataclass
class StagePlan:
    stage: int
    groups: tuple[str, ...]
    epochs: int
    lr: float
    batch_size: int
    max_steps: int | None = None
    grad_clip: float | None = None


@dataclass
class TrainReport:
    stage: int
    losses: list[float]
    steps: int
    trainable: list[str]
    hashes_before: dict[str, str]
    hashes_after: dict[str, str]
    retrieval: dict[str, float] | None = None

    def final_loss(self, window: int = 10) -> float:
        if not self.losses:
            raise ContractError("stage recorded no steps")
        tail = self.losses[-window:]
        return sum(tail) / len(tail)

    def smoothed(self, window: int = 10) -> list[float]:
        out = []
        for i in range(len(self.losses)):
            lo = max(0, i - window + 1)
            chunk = self.losses[lo:i + 1]
            out.append(sum(chunk) / len(chunk))
        return out


class Adam:
    """Standard Adam with bias correction over named parameter tensors.

    Moment buffers exist only for the tensors handed in, i.e. the trainable
    set of the active stage.
    """

    def __init__(self, params: list[tuple[str, Tensor]], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 grad_clip: float | None = None):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params}
        self.v = {name: np.zeros_like(t.data) for name, t in params}

    def zero_grad(self) -> None:
        for _, t in self.params:
            t.grad = None

    def step(self) -> None:
        self.step_count += 1
        grads = {}
        for name, t in self.params:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            grads[name] = g
        if self.grad_clip is not None:
            total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                                  for g in grads.values()))
            if total > self.grad_clip:
                factor = np.float32(self.grad_clip / total)
                grads = {k: g * factor for k, g in grads.items()}
        b1 = np.float32(self.beta1)
        b2 = np.float32(self.beta2)
        bias1 = np.float32(1.0 - self.beta1 ** self.step_count)
        bias2 = np.float32(1.0 - self.beta2 ** self.step_count)
        lr = np.float32(self.lr)
        eps = np.float32(self.eps)
        one = np.float32(1.0)
        for name, t in self.params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (one - b1) * g
            v *= b2
            v += (one - b2) * (g * g)
            m_hat = m / bias1
            v_hat = v / bias2
            t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def next_token_accuracy(model: ChartSummarizer, samples) -> float:
    """Fraction of greedy next-token predictions matching the reference."""
    correct = total = 0
    for s in samples:
        c, t = model.sample_token_counts(s)
        correct += c
        total += t
    return correct / total


def run_lm_stage(model: ChartSummarizer, samples, plan: StagePlan,
                 shuffle_rng: np.random.Generator,
                 early_stop=None, early_stop_every: int = 50) -> TrainReport:
    """Minimize the summary loss, updating exactly ``plan.groups``."""
    if not samples:
        raise ContractError("cannot train on an empty dataset")
    model.set_trainable(plan.groups)
    hashes_before = model.group_hashes()
    adam = Adam(model.trainable_parameters(), lr=plan.lr, grad_clip=plan.grad_clip)
    losses: list[float] = []
    done = False
    for _ in range(plan.epochs):
        order = shuffle_rng.permutation(len(samples))
        for start in range(0, len(order), plan.batch_size):
            batch = [samples[i] for i in order[start:start + plan.batch_size]]
            reset_tape()
            adam.zero_grad()
            total = None
            for s in batch:
                loss = model.sample_loss(s)
                total = loss if total is None else add(total, loss)
            total = scale(total, 1.0 / len(batch))
            backward(total)
            adam.step()
            losses.append(total.item())
            if plan.max_steps is not None and len(losses) >= plan.max_steps:
                done = True
                break
            if (early_stop is not None and len(losses) % early_stop_every == 0
                    and early_stop(model)):
                done = True
                break
        if done:
            break
    return TrainReport(stage=plan.stage, losses=losses, steps=len(losses),
                       trainable=sorted(plan.groups),
                       hashes_before=hashes_before,
                       hashes_after=model.group_hashes())


def run_stage2(model: ChartSummarizer, samples, plan: StagePlan,
               shuffle_rng: np.random.Generator) -> TrainReport:
    """Connector-wide training with the language model frozen."""
    if plan.stage != 2 or set(plan.groups) != set(STAGE2_GROUPS):
        raise ContractError("plan does not match the stage-2 trainable set")
    return run_lm_stage(model, samples, plan, shuffle_rng)


def run_stage3(model: ChartSummarizer, samples, plan: StagePlan,
               shuffle_rng: np.random.Generator, early_stop=None) -> TrainReport:
    """Joint fine-tuning of connector and language model."""
    if plan.stage != 3 or set(plan.groups) != set(STAGE3_GROUPS):
        raise ContractError("plan does not match the stage-3 trainable set")
    return run_lm_stage(model, samples, plan, shuffle_rng, early_stop=early_stop)


def _plan(stage: int, groups, settings: StageSettings) -> StagePlan:
    return StagePlan(stage=stage, groups=tuple(groups), epochs=settings.epochs,
                     lr=settings.lr, batch_size=settings.batch_size,
                     max_steps=settings.max_steps, grad_clip=settings.grad_clip)


def _restrict(plan: StagePlan, allowed) -> StagePlan:
    groups = tuple(g for g in plan.groups if g in set(allowed))
    return replace(plan, groups=groups)


def plans_for_variant(variant: str, cfg: RunConfig) -> list[StagePlan]:
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    s1 = _plan(1, STAGE1_GROUPS, cfg.stage1)
    s2 = _plan(2, STAGE2_GROUPS, cfg.stage2)
    s3 = _plan(3, STAGE3_GROUPS, cfg.stage3)
    if variant == "full":
        return [s1, s2, s3]
    if variant == "no_stage1":
        return [s2, s3]
    if variant == "no_stage2":
        return [s1, s3]
    if variant == "cha_only":
        return [s1, _restrict(s2, CHA_GROUPS), _restrict(s3, CHA_GROUPS)]
    return [s1, _restrict(s2, LLM_ONLY_GROUPS), _restrict(s3, LLM_ONLY_GROUPS)]


@dataclass
class PipelineResult:
    variant: str
    model: ChartSummarizer
    stage_reports: list[TrainReport]
    eval_report: EvalReport
    init_hashes: dict[str, str] = field(default_factory=dict)


def run_pipeline(variant: str, samples, cfg: RunConfig,
                 out_dir=None) -> PipelineResult:
    """Execute one ablation variant end to end from a fixed seed.

    Trains on the 'train' split, evaluates text metrics on ``cfg.eval_split``,
    and (when ``out_dir`` is given) writes per-stage checkpoints, a
    line-delimited training log, group hashes, and the final report.
    """
    from . import contrastive  # imported here; contrastive imports this module

    plans = plans_for_variant(variant, cfg)
    train = [s for s in samples if s.split == "train"]
    evals = [s for s in samples if s.split == cfg.eval_split]
    if not train:
        raise ContractError("dataset has no training samples")
    if not evals:
        raise ContractError(f"dataset has no samples in eval split {cfg.eval_split!r}")
    model = ChartSummarizer.create(cfg, rng_for(cfg.seed, "init"))
    init_hashes = model.group_hashes()

    early_stop = None
    if cfg.stage3_target_accuracy is not None:
        target = cfg.stage3_target_accuracy

        def early_stop(m, _target=target, _train=train):
            return next_token_accuracy(m, _train) >= _target

    out = Path(out_dir) if out_dir is not None else None
    log_lines: list[str] = []
    reports: list[TrainReport] = []
    for plan in plans:
        if plan.stage == 1:
            report = contrastive.run_stage1(model, train, plan,
                                            rng_for(cfg.seed, "stage1"))
        else:
            report = run_lm_stage(
                model, train, plan, rng_for(cfg.seed, f"stage{plan.stage}"),
                early_stop=early_stop if plan.stage == 3 else None)
        reports.append(report)
        for i, loss in enumerate(report.losses):
            log_lines.append(json.dumps({"step": i, "stage": plan.stage, "loss": loss}))
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(out / f"stage{plan.stage}.ckpt",
                            model.parameter_groups(), cfg.to_dict())

    eval_report = evaluate_corpus(model, evals)
    eval_report.variant = variant
    for report in reports:
        if report.retrieval is not None:
            eval_report.contrastive = report.retrieval
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.jsonl").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
        hash_doc = {
            "init": init_hashes,
            "stages": [
                {"stage": r.stage, "trainable": r.trainable,
                 "before": r.hashes_before, "after": r.hashes_after}
                for r in reports
            ],
        }
        (out / "group_hashes.json").write_text(json.dumps(hash_doc, indent=2),
                                               encoding="utf-8")
        eval_report.to_json(out / "eval_report.json")
    return PipelineResult(variant=variant, model=model, stage_reports=reports,
                          eval_report=eval_report, init_hashes=init_hashes)

"""Desk-scale cross-modal chart summarization.

A from-scratch tensor engine with reverse-mode autodiff, a cross-modal
connector between a toy chart encoder and a small decoder-only language
model, a three-stage trainer with parameter-group freezing, contrastive
alignment, BLEU/ROUGE metrics, and bit-exact checkpoints.
"""

from .adapter import (
    AdapterConfig,
    AdapterOutput,
    AdapterParams,
    adapter_forward,
    cross_modal_interact,
    inverse_project,
    latent_transform,
    project,
    semantic_decode,
)
from .backbone import (
    ChartEncoderConfig,
    LMConfig,
    PrefixComposition,
    TinyLM,
    Tokenizer,
    compose_input,
    encode_chart,
    generate_greedy,
    lm_loss,
)
from .config import RunConfig, StageSettings, rng_for
from .contrastive import (
    ContrastiveBatch,
    info_nce_loss,
    retrieval_binary_metrics,
    run_stage1,
)
from .data import (
    ChartSample,
    ChartSpec,
    build_vocabulary,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
    templated_summary,
)
from .metrics import EvalReport, bleu4, evaluate_corpus, rouge_l, rouge_n
from .model import ChartSummarizer, GROUP_NAMES
from .tensor import Tensor, backward, finite_difference_check, no_grad, reset_tape
from .training import (
    Adam,
    StagePlan,
    TrainReport,
    VARIANTS,
    next_token_accuracy,
    plans_for_variant,
    run_pipeline,
    run_stage2,
    run_stage3,
)

__version__ = "0.1.0"

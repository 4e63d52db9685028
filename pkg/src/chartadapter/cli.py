"""Command-line entry points.

Subcommands: generate-data, train, evaluate, summarize, gradcheck, ablate.
All randomness flows from the run config's seed; identical invocations
produce identical artifacts.  Errors exit nonzero with a one-line message.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_into_model
from .config import RunConfig
from .data import ChartSample, ChartSpec, generate_synthetic, load_jsonl, save_jsonl
from .errors import ConfigError
from .metrics import evaluate_corpus, format_ablation_table
from .model import ChartSummarizer


def _load_config(path: str | None, seed: int | None = None) -> RunConfig:
    cfg = RunConfig.from_file(path) if path else RunConfig()
    if seed is not None:
        cfg = cfg.with_overrides(seed=seed)
    return cfg


def _load_samples(cfg: RunConfig) -> list[ChartSample]:
    if cfg.dataset_path:
        return load_jsonl(cfg.dataset_path)
    return generate_synthetic(cfg.n_samples, cfg.seed)


def _model_from_checkpoint(path: str) -> ChartSummarizer:
    from .checkpoint import load_checkpoint

    config_echo, _ = load_checkpoint(path)
    model = ChartSummarizer.create(RunConfig.from_dict(config_echo))
    load_into_model(model, path)
    return model


def cmd_generate_data(args) -> int:
    samples = generate_synthetic(args.n, args.seed)
    save_jsonl(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .training import run_pipeline

    cfg = _load_config(args.config, args.seed)
    samples = _load_samples(cfg)
    result = run_pipeline(args.variant, samples, cfg, out_dir=args.out)
    report = result.eval_report
    print(f"variant={result.variant} bleu4={report.bleu4:.4f} "
          f"rouge1={report.rouge1:.4f} rouge2={report.rouge2:.4f} "
          f"rougeL={report.rougeL:.4f}")
    print(f"artifacts under {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    model = _model_from_checkpoint(args.checkpoint)
    samples = [s for s in load_jsonl(args.data) if s.split == args.split]
    report = evaluate_corpus(model, samples)
    report.to_json(args.out)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_summarize(args) -> int:
    model = _model_from_checkpoint(args.checkpoint)
    record = json.loads(Path(args.chart_json).read_text(encoding="utf-8"))
    spec = ChartSpec.from_record(record)
    print(model.greedy_summary(spec))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_results, run_gradient_suite

    cfg = _load_config(args.config)
    results = run_gradient_suite(base_seed=cfg.seed, n_seeds=args.seeds)
    print(format_results(results))
    if all(r.passed for r in results):
        return 0
    print("gradient checks FAILED", file=sys.stderr)
    return 1


def cmd_ablate(args) -> int:
    from .training import VARIANTS, run_pipeline

    cfg = _load_config(args.config, args.seed)
    samples = _load_samples(cfg)
    reports = []
    out = Path(args.out)
    for variant in VARIANTS:
        result = run_pipeline(variant, samples, cfg, out_dir=out / variant)
        reports.append(result.eval_report)
    table = format_ablation_table(reports)
    (out / "ablation.json").write_text(
        json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8")
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chartadapter",
        description="Desk-scale chart summarization: data, training, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic JSONL manifest")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="run one training variant end to end")
    p.add_argument("--config", default=None, help="JSON run config; defaults apply")
    p.add_argument("--variant", default="full",
                   choices=["full", "no_stage1", "no_stage2", "cha_only", "llm_only"])
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("summarize", help="print a summary for one chart JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--chart-json", required=True)
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("gradcheck", help="finite-difference verification table")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run all five variants and tabulate")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())

"""Run configuration: one JSON-serializable object that, together with the
build, fully determines a run."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .adapter import AdapterConfig
from .backbone import ChartEncoderConfig, LMConfig
from .errors import ConfigError


def rng_for(seed: int, purpose: str) -> np.random.Generator:
    """One seeded generator per run, split into named substreams."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(purpose.encode("utf-8"))])
    )


@dataclass
class StageSettings:
    epochs: int
    lr: float
    batch_size: int
    max_steps: int | None = None
    grad_clip: float | None = None


@dataclass
class RunConfig:
    seed: int = 0
    # connector
    d_v: int = 48
    d_t: int = 64
    n_q: int = 16
    n_layers: int = 2
    n_heads: int = 4
    d_hidden_mlp: int = 128
    d_l: int = 64
    # chart encoder
    max_patches: int = 16
    # language model
    lm_blocks: int = 2
    lm_heads: int = 4
    lm_d_ff: int = 256
    max_seq: int = 128
    prompt: str = "describe this chart"
    # data: either a JSONL manifest path or synthesis parameters
    dataset_path: str | None = None
    n_samples: int = 512
    eval_split: str = "test"
    # stages
    stage1: StageSettings = field(default_factory=lambda: StageSettings(
        epochs=40, lr=3e-4, batch_size=32, max_steps=400))
    stage2: StageSettings = field(default_factory=lambda: StageSettings(
        epochs=10, lr=1e-3, batch_size=8, max_steps=300))
    stage3: StageSettings = field(default_factory=lambda: StageSettings(
        epochs=40, lr=1e-3, batch_size=8, max_steps=800))
    # optional early stop for the joint stage: stop once next-token training
    # accuracy reaches this value (checked every 50 steps)
    stage3_target_accuracy: float | None = None

    def adapter_config(self) -> AdapterConfig:
        return AdapterConfig(d_v=self.d_v, d_t=self.d_t, n_q=self.n_q,
                             n_layers=self.n_layers, n_heads=self.n_heads,
                             d_hidden_mlp=self.d_hidden_mlp, d_l=self.d_l)

    def encoder_config(self) -> ChartEncoderConfig:
        return ChartEncoderConfig(d_v=self.d_v, max_patches=self.max_patches)

    def lm_config(self, vocab_size: int) -> LMConfig:
        return LMConfig(vocab_size=vocab_size, d_l=self.d_l, n_blocks=self.lm_blocks,
                        n_heads=self.lm_heads, d_ff=self.lm_d_ff, max_seq=self.max_seq)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        for key in ("stage1", "stage2", "stage3"):
            if key in raw and isinstance(raw[key], dict):
                raw[key] = StageSettings(**raw[key])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from exc
        return cls.from_dict(raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def with_overrides(self, **kwargs) -> "RunConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)

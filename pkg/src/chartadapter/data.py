"""Synthetic chart-summarization corpus: specs, template summaries, JSONL I/O.

Every summary is a deterministic function of its chart spec over a closed
vocabulary, so the task is solvable in principle and any generated text
tokenizes without unknown words.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

CHART_TYPES = ("bar", "line", "pie")
COMPLEXITIES = ("simple", "complex")

CATEGORY_POOL = (
    "north", "south", "east", "west",
    "spring", "summer", "autumn", "winter",
    "red", "blue", "green", "yellow",
    "gold", "silver", "copper", "iron",
)
TITLE_ADJECTIVES = ("monthly", "annual", "quarterly", "weekly",
                    "daily", "regional", "global", "domestic")
TITLE_NOUNS = ("sales", "revenue", "traffic", "rainfall", "temperature",
               "population", "output", "demand", "exports", "usage")
TEMPLATE_WORDS = (
    "the", "chart", "titled", "shows", "categories", ".",
    "highest", "lowest", "value", "is", "in",
    "overall", "values", "increased", "decreased", "remained", "stable",
    "from", "to", "largest", "smallest", "share", "with",
    "a", "second", "series", "peaks", "at",
    "bar", "line", "pie", "describe", "this",
)
NUMBER_WORDS = tuple(str(i) for i in range(1, 101))

_JSONL_FIELDS = ("id", "chart_type", "complexity", "title", "categories",
                 "series", "summary", "source", "split")
SPLITS = ("train", "val", "test")


def build_vocabulary() -> list[str]:
    """Closed word list covering everything the generator can emit."""
    words = set(TEMPLATE_WORDS) | set(CATEGORY_POOL) | set(TITLE_ADJECTIVES)
    words |= set(TITLE_NOUNS) | set(NUMBER_WORDS)
    return sorted(words)


@dataclass
class ChartSpec:
    chart_type: str
    title: str
    categories: list[str]
    series: list[list[float]]  # one inner list for simple charts, two for complex
    complexity: str

    def validate(self) -> None:
        if self.chart_type not in CHART_TYPES:
            raise DataError(f"unknown chart type {self.chart_type!r}")
        if self.complexity not in COMPLEXITIES:
            raise DataError(f"unknown complexity {self.complexity!r}")
        if len(self.categories) < 2:
            raise DataError("a chart needs at least two categories")
        expected = 2 if self.complexity == "complex" else 1
        if len(self.series) != expected:
            raise DataError(
                f"{self.complexity} chart must carry {expected} series, got {len(self.series)}"
            )
        for s in self.series:
            if len(s) != len(self.categories):
                raise DataError(
                    f"series length {len(s)} != category count {len(self.categories)}"
                )
        if self.chart_type == "pie":
            for s in self.series:
                if any(v < 0 for v in s):
                    raise DataError("pie values must be nonnegative")

    @classmethod
    def from_record(cls, record: dict) -> "ChartSpec":
        spec = cls(
            chart_type=record["chart_type"],
            title=record["title"],
            categories=list(record["categories"]),
            series=[list(map(float, s)) for s in record["series"]],
            complexity=record["complexity"],
        )
        spec.validate()
        return spec


@dataclass
class ChartSample:
    id: str
    spec: ChartSpec
    summary: str
    source: str
    split: str

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "chart_type": self.spec.chart_type,
            "complexity": self.spec.complexity,
            "title": self.spec.title,
            "categories": list(self.spec.categories),
            "series": [list(s) for s in self.spec.series],
            "summary": self.summary,
            "source": self.source,
            "split": self.split,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ChartSample":
        missing = [k for k in _JSONL_FIELDS if k not in record]
        if missing:
            raise DataError(f"missing field {missing[0]!r}")
        if record["split"] not in SPLITS:
            raise DataError(f"unknown split {record['split']!r}")
        if not record["summary"]:
            raise DataError("summary must be nonempty")
        return cls(
            id=str(record["id"]),
            spec=ChartSpec.from_record(record),
            summary=record["summary"],
            source=str(record["source"]),
            split=record["split"],
        )


def _fmt(v: float) -> str:
    return f"{v:g}"


def templated_summary(spec: ChartSpec) -> str:
    """Deterministic reference summary; argmax/argmin ties break toward the lowest index."""
    spec.validate()
    cats = spec.categories
    v = spec.series[0]
    hi = max(range(len(v)), key=v.__getitem__)
    lo = min(range(len(v)), key=v.__getitem__)
    parts = [
        f"the {spec.chart_type} chart titled {spec.title} "
        f"shows {_fmt(len(cats))} categories ."
    ]
    if spec.chart_type == "pie":
        parts.append(f"the largest share is {cats[hi]} with {_fmt(v[hi])} .")
        parts.append(f"the smallest share is {cats[lo]} with {_fmt(v[lo])} .")
    else:
        parts.append(f"the highest value is {_fmt(v[hi])} in {cats[hi]} .")
        parts.append(f"the lowest value is {_fmt(v[lo])} in {cats[lo]} .")
    if spec.chart_type == "line":
        first, last = v[0], v[-1]
        if last > first:
            parts.append(f"overall the values increased from {_fmt(first)} to {_fmt(last)} .")
        elif last < first:
            parts.append(f"overall the values decreased from {_fmt(first)} to {_fmt(last)} .")
        else:
            parts.append("overall the values remained stable .")
    if spec.complexity == "complex":
        v2 = spec.series[1]
        hi2 = max(range(len(v2)), key=v2.__getitem__)
        parts.append(f"a second series peaks at {_fmt(v2[hi2])} in {cats[hi2]} .")
    return " ".join(parts)


def _split_for_index(i: int, n: int) -> str:
    n_train = int(n * 0.9)
    n_val = int(n * 0.05)
    if i < n_train:
        return "train"
    if i < n_train + n_val:
        return "val"
    return "test"


def generate_synthetic(n: int, seed: int) -> list[ChartSample]:
    """Seeded random corpus over the three chart types, split 90/5/5 by index."""
    if n < 1:
        raise DataError("need n >= 1 samples")
    rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(b"chart-data")]))
    samples = []
    for i in range(n):
        chart_type = CHART_TYPES[int(rng.integers(0, len(CHART_TYPES)))]
        complexity = "complex" if rng.random() < 0.3 else "simple"
        n_cat = int(rng.integers(3, 9))
        cats = [CATEGORY_POOL[j] for j in rng.choice(len(CATEGORY_POOL), n_cat, replace=False)]
        n_series = 2 if complexity == "complex" else 1
        series = [[float(x) for x in rng.integers(1, 101, size=n_cat)] for _ in range(n_series)]
        title = (f"{TITLE_ADJECTIVES[int(rng.integers(0, len(TITLE_ADJECTIVES)))]} "
                 f"{TITLE_NOUNS[int(rng.integers(0, len(TITLE_NOUNS)))]}")
        spec = ChartSpec(chart_type=chart_type, title=title, categories=cats,
                         series=series, complexity=complexity)
        samples.append(ChartSample(
            id=f"syn-{seed}-{i:06d}",
            spec=spec,
            summary=templated_summary(spec),
            source="synthetic",
            split=_split_for_index(i, n),
        ))
    return samples


def save_jsonl(path, samples: list[ChartSample]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False))
            fh.write("\n")


def load_jsonl(path) -> list[ChartSample]:
    samples: list[ChartSample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                raise DataError(f"{path}: line {lineno}: blank line")
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from exc
            try:
                sample = ChartSample.from_record(record)
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
            if sample.id in seen:
                raise DataError(f"{path}: line {lineno}: duplicate id {sample.id!r}")
            seen.add(sample.id)
            samples.append(sample)
    return samples

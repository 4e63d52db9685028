import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartadapter.backbone import Tokenizer
from chartadapter.data import (
    ChartSample,
    ChartSpec,
    build_vocabulary,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
    templated_summary,
)
from chartadapter.errors import DataError


class TestGenerator:
    def test_byte_identical_manifests(self, tmp_path):
        paths = []
        for i in range(2):
            p = tmp_path / f"m{i}.jsonl"
            save_jsonl(p, generate_synthetic(64, seed=42))
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_split_sizes_90_5_5(self):
        samples = generate_synthetic(100, seed=0)
        counts = Counter(s.split for s in samples)
        assert counts == {"train": 90, "val": 5, "test": 5}

    def test_type_distribution(self):
        samples = generate_synthetic(3000, seed=123)
        counts = Counter(s.spec.chart_type for s in samples)
        for chart_type in ("bar", "line", "pie"):
            assert 0.28 <= counts[chart_type] / 3000 <= 0.38

    def test_ids_unique(self):
        samples = generate_synthetic(200, seed=7)
        assert len({s.id for s in samples}) == 200

    def test_different_seeds_differ(self):
        a = generate_synthetic(10, seed=1)
        b = generate_synthetic(10, seed=2)
        assert [s.summary for s in a] != [s.summary for s in b]

    def test_n_below_one_rejected(self):
        with pytest.raises(DataError):
            generate_synthetic(0, seed=0)


class TestTemplatedSummary:
    def test_bar_names_highest_and_lowest(self):
        spec = ChartSpec(chart_type="bar", title="weekly sales",
                         categories=["north", "south", "east"],
                         series=[[5.0, 9.0, 2.0]], complexity="simple")
        summary = templated_summary(spec)
        assert "the highest value is 9 in south" in summary
        assert "the lowest value is 2 in east" in summary

    def test_line_trend_increasing(self):
        spec = ChartSpec(chart_type="line", title="annual rainfall",
                         categories=["spring", "summer", "autumn"],
                         series=[[1.0, 5.0, 9.0]], complexity="simple")
        assert "increased from 1 to 9" in templated_summary(spec)

    def test_line_trend_decreasing_and_stable(self):
        base = dict(chart_type="line", title="annual rainfall",
                    categories=["spring", "summer"], complexity="simple")
        down = templated_summary(ChartSpec(series=[[9.0, 3.0]], **base))
        flat = templated_summary(ChartSpec(series=[[4.0, 4.0]], **base))
        assert "decreased from 9 to 3" in down
        assert "remained stable" in flat

    def test_pie_tie_breaks_toward_earlier_category(self):
        spec = ChartSpec(chart_type="pie", title="global usage",
                         categories=["red", "blue"],
                         series=[[50.0, 50.0]], complexity="simple")
        assert "the largest share is red with 50" in templated_summary(spec)

    def test_complex_mentions_second_series(self):
        spec = ChartSpec(chart_type="bar", title="daily output",
                         categories=["gold", "iron"],
                         series=[[3.0, 7.0], [8.0, 1.0]], complexity="complex")
        assert "a second series peaks at 8 in gold" in templated_summary(spec)

    def test_vocabulary_closure(self):
        tok = Tokenizer(build_vocabulary())
        for sample in generate_synthetic(300, seed=5):
            ids = tok.encode(sample.summary)
            assert tok.unk_id not in ids, sample.summary

    def test_summary_reconstructible_from_spec(self):
        for sample in generate_synthetic(50, seed=9):
            assert templated_summary(sample.spec) == sample.summary


class TestSpecValidation:
    def test_pie_negative_values_rejected(self):
        spec = ChartSpec(chart_type="pie", title="t", categories=["a", "b"],
                         series=[[1.0, -2.0]], complexity="simple")
        with pytest.raises(DataError):
            spec.validate()

    def test_series_category_mismatch(self):
        spec = ChartSpec(chart_type="bar", title="t", categories=["a", "b"],
                         series=[[1.0]], complexity="simple")
        with pytest.raises(DataError):
            spec.validate()

    def test_complex_needs_two_series(self):
        spec = ChartSpec(chart_type="bar", title="t", categories=["a", "b"],
                         series=[[1.0, 2.0]], complexity="complex")
        with pytest.raises(DataError):
            spec.validate()


class TestJsonl:
    def test_round_trip_identity(self, tmp_path):
        samples = generate_synthetic(40, seed=3)
        path = tmp_path / "data.jsonl"
        save_jsonl(path, samples)
        loaded = load_jsonl(path)
        assert [s.to_record() for s in loaded] == [s.to_record() for s in samples]

    def test_missing_field_reports_line_number(self, tmp_path):
        sample = generate_synthetic(1, seed=0)[0]
        record = sample.to_record()
        del record["summary"]
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(sample.to_record()) + "\n" + json.dumps(record) + "\n")
        with pytest.raises(DataError, match="line 2"):
            load_jsonl(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a"}\nnot json\n')
        with pytest.raises(DataError, match="line 1"):
            load_jsonl(path)  # first record already missing fields

    def test_duplicate_id_rejected(self, tmp_path):
        sample = generate_synthetic(1, seed=0)[0]
        line = json.dumps(sample.to_record())
        path = tmp_path / "dup.jsonl"
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(DataError, match="duplicate id"):
            load_jsonl(path)


chart_specs = st.builds(
    ChartSpec,
    chart_type=st.sampled_from(["bar", "line"]),
    title=st.sampled_from(["weekly sales", "annual demand"]),
    categories=st.just(["north", "south", "east"]),
    series=st.lists(
        st.lists(st.integers(1, 100).map(float), min_size=3, max_size=3),
        min_size=1, max_size=1),
    complexity=st.just("simple"),
)


@given(st.lists(chart_specs, min_size=1, max_size=6))
@settings(max_examples=30, deadline=None)
def test_jsonl_round_trip_property(tmp_path_factory, specs):
    samples = [
        ChartSample(id=f"s{i}", spec=spec, summary=templated_summary(spec),
                    source="prop", split="train")
        for i, spec in enumerate(specs)
    ]
    path = tmp_path_factory.mktemp("jsonl") / "prop.jsonl"
    save_jsonl(path, samples)
    assert [s.to_record() for s in load_jsonl(path)] == [s.to_record() for s in samples]

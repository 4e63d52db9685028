import numpy as np
import pytest

from chartadapter import tensor as T
from chartadapter.backbone import (
    ChartEncoderConfig,
    LMConfig,
    PrefixComposition,
    TinyLM,
    Tokenizer,
    compose_input,
    encode_chart,
    generate_greedy,
    lm_loss,
    summary_input_ids,
)
from chartadapter.data import ChartSpec, build_vocabulary, generate_synthetic
from chartadapter.errors import ConfigError, ContractError, DataError, SequenceLengthError


def bar_spec(values, categories=None, title="weekly sales"):
    categories = categories or [f"c{i}" for i in range(len(values))]
    return ChartSpec(chart_type="bar", title=title, categories=categories,
                     series=[list(map(float, values))], complexity="simple")


def tiny_lm(seed=0, vocab_size=23, **kw):
    cfg_kw = dict(vocab_size=vocab_size, d_l=16, n_blocks=1, n_heads=2,
                  d_ff=32, max_seq=64)
    cfg_kw.update(kw)
    cfg = LMConfig(**cfg_kw)
    return cfg, TinyLM(cfg, np.random.default_rng(seed))


class TestTokenizer:
    def test_round_trip(self):
        tok = Tokenizer(build_vocabulary())
        text = "the bar chart titled weekly sales shows 3 categories ."
        assert tok.decode(tok.encode(text)) == text

    def test_specials_distinct_and_below_words(self):
        tok = Tokenizer(["apple", "pear"])
        ids = [tok.pad_id, tok.bos_id, tok.eos_id, tok.chart_id, tok.unk_id]
        assert len(set(ids)) == 5
        assert max(ids) < min(tok.encode("apple pear"))

    def test_unknown_words_map_to_unk(self):
        tok = Tokenizer(["known"])
        assert tok.encode("known zzz") == [tok.ids["known"], tok.unk_id]

    def test_save_load(self, tmp_path):
        tok = Tokenizer(build_vocabulary())
        path = tmp_path / "vocab.txt"
        tok.save(path)
        lines = path.read_text().splitlines()
        assert lines[:5] == list(Tokenizer.SPECIALS)
        loaded = Tokenizer.load(path)
        assert loaded.tokens == tok.tokens

    def test_load_rejects_missing_specials(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("alpha\nbeta\n")
        with pytest.raises(DataError):
            Tokenizer.load(path)


class TestChartEncoder:
    def test_deterministic(self):
        spec = bar_spec([1, 2, 3])
        cfg = ChartEncoderConfig(d_v=16, max_patches=8)
        a = encode_chart(spec, cfg)
        b = encode_chart(bar_spec([1, 2, 3]), cfg)
        assert np.array_equal(a.data, b.data)

    def test_value_channels_only_differ(self):
        cfg = ChartEncoderConfig(d_v=20, max_patches=8)
        a = encode_chart(bar_spec([1, 2, 3]), cfg).data
        b = encode_chart(bar_spec([3, 2, 1]), cfg).data
        n_hash = cfg.d_v - 7
        k_label = (n_hash + 2) // 3
        # type one-hot, position, and label-hash channels are value-independent
        fixed = list(range(2, 7)) + list(range(7, 7 + k_label))
        assert np.array_equal(a[:, fixed], b[:, fixed])
        assert not np.array_equal(a, b)
        assert np.array_equal(a[1], b[1])  # middle point identical in both charts

    def test_patch_count_below_cap(self):
        cfg = ChartEncoderConfig(d_v=16, max_patches=10)
        assert encode_chart(bar_spec([5, 9, 2]), cfg).shape == (3, 16)

    def test_truncated_at_cap(self):
        cfg = ChartEncoderConfig(d_v=16, max_patches=4)
        assert encode_chart(bar_spec([1, 2, 3, 4, 5, 6]), cfg).shape == (4, 16)

    def test_empty_series_rejected(self):
        spec = ChartSpec(chart_type="bar", title="t", categories=[],
                         series=[[]], complexity="simple")
        with pytest.raises(DataError):
            encode_chart(spec, ChartEncoderConfig(d_v=16))

    def test_d_v_floor(self):
        with pytest.raises(ConfigError):
            ChartEncoderConfig(d_v=6)


class TestCompose:
    def test_length_arithmetic(self, rng):
        cfg, lm = tiny_lm()
        comp = PrefixComposition(cfg.d_l, 5, 7, rng)
        r = T.Tensor(rng.standard_normal((4, 5)), requires_grad=False)
        g = T.Tensor(rng.standard_normal((5, 7)), requires_grad=False)
        composed, prefix_len = compose_input([7, 8, 9], r, g, comp, lm,
                                             summary_input_ids([5, 6, 7, 8, 9, 10, 2]))
        assert composed.shape == (19, cfg.d_l)
        assert prefix_len == 12

    def test_summary_only_stream(self, rng):
        cfg, lm = tiny_lm()
        comp = PrefixComposition(cfg.d_l, 4, 4, rng)
        ids = [1, 5, 6]
        composed, prefix_len = compose_input([], None, None, comp, lm, ids)
        assert prefix_len == 0
        expected = lm.tok_emb.data[ids] + lm.pos_emb.data[:3]
        np.testing.assert_allclose(composed.data, expected, rtol=1e-6)

    def test_swapping_r_rows_moves_exactly_those_positions(self, rng):
        cfg, lm = tiny_lm()
        comp = PrefixComposition(cfg.d_l, 5, 7, rng)
        r_data = rng.standard_normal((4, 5)).astype(np.float32)
        g = T.Tensor(rng.standard_normal((2, 7)), requires_grad=False)
        base, _ = compose_input([3], T.Tensor(r_data, requires_grad=False), g,
                                comp, lm, [1, 5])
        swapped_r = r_data[[1, 0, 2, 3]]
        swapped, _ = compose_input([3], T.Tensor(swapped_r, requires_grad=False), g,
                                   comp, lm, [1, 5])
        diff_rows = np.nonzero((base.data != swapped.data).any(axis=1))[0].tolist()
        assert diff_rows == [1, 2]  # the two swapped r positions, after the prompt

    def test_capacity_exceeded(self, rng):
        cfg, lm = tiny_lm(max_seq=8)
        comp = PrefixComposition(cfg.d_l, 4, 4, rng)
        r = T.Tensor(rng.standard_normal((9, 4)), requires_grad=False)
        with pytest.raises(SequenceLengthError):
            compose_input([], r, None, comp, lm, [1])


class TestLMLoss:
    def _setup(self, rng, seed=0):
        cfg, lm = tiny_lm(seed)
        comp = PrefixComposition(cfg.d_l, 5, 6, rng)
        r = T.Tensor(rng.standard_normal((2, 5)), requires_grad=False)
        g = T.Tensor(rng.standard_normal((3, 6)), requires_grad=False)
        targets = [7, 9, 11, Tokenizer.eos_id]
        composed, prefix_len = compose_input([3, 4], r, g, comp, lm,
                                             summary_input_ids(targets))
        return lm, comp, composed, prefix_len, targets, r, g

    def test_uniform_logits_loss_is_log_vocab(self, rng):
        cfg, lm = tiny_lm()
        # zeroed head makes every logit identical
        lm.head_w.data[...] = 0.0
        comp = PrefixComposition(cfg.d_l, 4, 4, rng)
        targets = [6, 7, Tokenizer.eos_id]
        composed, prefix_len = compose_input([3], None, None, comp, lm,
                                             summary_input_ids(targets))
        loss = lm_loss(lm, composed, prefix_len, targets)
        assert loss.item() == pytest.approx(np.log(cfg.vocab_size), rel=1e-5)

    def test_empty_target_rejected(self, rng):
        lm, comp, composed, prefix_len, targets, _, _ = self._setup(rng)
        with pytest.raises(ContractError):
            lm_loss(lm, composed, prefix_len, [])

    def test_target_must_end_with_eos(self, rng):
        lm, comp, composed, prefix_len, targets, _, _ = self._setup(rng)
        with pytest.raises(ContractError):
            lm_loss(lm, composed, prefix_len, [5, 6, 7, 8])

    def test_gradient_wrt_prefix_projections(self, rng):
        lm, comp, _, _, targets, r, g = self._setup(rng, seed=3)
        for _, t in lm.named_parameters():
            t.data[...] = (0.4 * rng.standard_normal(t.shape)).astype(np.float32)
        for _, t in comp.named_parameters():
            t.data[...] = (0.6 * rng.standard_normal(t.shape)).astype(np.float32)

        def loss():
            composed, prefix_len = compose_input([3, 4], r, g, comp, lm,
                                                 summary_input_ids(targets))
            return lm_loss(lm, composed, prefix_len, targets)

        for t in (comp.w_r, comp.w_g):
            assert T.finite_difference_check(lambda _t: loss(), t, 1e-3) < 1e-3

    def test_gradients_reach_every_group(self, rng):
        from chartadapter.model import ChartSummarizer
        from tests.conftest import tiny_run_config

        model = ChartSummarizer.create(tiny_run_config(seed=2))
        sample = generate_synthetic(1, 4)[0]
        T.reset_tape()
        T.backward(model.sample_loss(sample))
        for group in ("projector", "latent_queries", "latent_mlp",
                      "interaction_stack", "decoder_stack", "lm",
                      "prefix_projections"):
            tensors = model.parameter_groups()[group]
            assert any(t.grad is not None and np.abs(t.grad).max() > 0
                       for _, t in tensors), f"no gradient reached {group}"


class TestCausality:
    def test_later_positions_cannot_affect_earlier_logits(self, rng):
        cfg, lm = tiny_lm(5)
        x_data = rng.standard_normal((10, cfg.d_l)).astype(np.float32)
        with T.no_grad():
            base = lm.logits(lm.forward_hidden(
                T.Tensor(x_data, requires_grad=False))).data.copy()
            for t_pos in (4, 7, 9):
                perturbed = x_data.copy()
                perturbed[t_pos] += 1.5
                got = lm.logits(lm.forward_hidden(
                    T.Tensor(perturbed, requires_grad=False))).data
                assert np.array_equal(got[:t_pos], base[:t_pos])
                assert not np.array_equal(got[t_pos:], base[t_pos:])


class TestGenerate:
    def test_max_len_one(self, rng):
        cfg, lm = tiny_lm()
        prefix = T.Tensor(rng.standard_normal((3, cfg.d_l)), requires_grad=False)
        out = generate_greedy(lm, prefix, max_len=1)
        assert len(out) == 1

    def test_deterministic(self, rng):
        cfg, lm = tiny_lm(9)
        prefix = T.Tensor(rng.standard_normal((3, cfg.d_l)), requires_grad=False)
        assert generate_greedy(lm, prefix, 12) == generate_greedy(lm, prefix, 12)

    def test_max_len_zero_rejected(self, rng):
        cfg, lm = tiny_lm()
        prefix = T.Tensor(rng.standard_normal((1, cfg.d_l)), requires_grad=False)
        with pytest.raises(ContractError):
            generate_greedy(lm, prefix, 0)

    def test_overfit_single_sample_reproduces_summary(self):
        """A tiny LM memorizes one sequence and greedy decoding replays it."""
        from chartadapter.model import ChartSummarizer
        from chartadapter.training import Adam
        from tests.conftest import tiny_run_config

        model = ChartSummarizer.create(tiny_run_config(seed=6))
        sample = generate_synthetic(1, 12)[0]
        model.set_trainable({"lm", "prefix_projections"})
        adam = Adam(model.trainable_parameters(), lr=3e-3)
        for _ in range(300):
            T.reset_tape()
            adam.zero_grad()
            loss = model.sample_loss(sample)
            T.backward(loss)
            adam.step()
            if loss.item() < 0.01:
                break
        assert model.greedy_summary(sample.spec) == sample.summary

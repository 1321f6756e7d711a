import numpy as np
import pytest

from divrank.augment import (AugmentationConfig, augment_sequence,
                             mix_dominant, new_stats)
from divrank.errors import ConfigurationError, ContractViolation
from divrank.nn import RngStream
from divrank.tokens import LabelSpace, TokenSequence, build_sequence


class TestMixDominant:
    def test_midpoint(self):
        out = mix_dominant(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5)
        assert np.array_equal(out, [0.5, 0.5])

    def test_degenerate_zero(self):
        a = np.array([1.0, 0.0])
        assert np.array_equal(mix_dominant(a, np.array([0.0, 1.0]), 0.0), a)

    def test_degenerate_one(self):
        a = np.array([2.0, 0.0])
        assert np.array_equal(mix_dominant(a, np.array([0.0, 2.0]), 1.0), a)

    def test_analytic_query_side(self):
        out = mix_dominant(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.7)
        assert np.allclose(out, [0.7, 0.3], atol=1e-15)

    def test_analytic_image_side(self):
        out = mix_dominant(np.array([2.0, 0.0]), np.array([0.0, 2.0]), 0.6)
        assert np.allclose(out, [1.2, 0.8], atol=1e-15)

    def test_first_operand_dominates(self):
        rng = RngStream(0, "mix")
        for _ in range(100):
            lam = float(rng.random())
            out = mix_dominant(np.array([1.0]), np.array([0.0]), lam)
            assert out[0] >= 0.5  # coefficients sum to 1, primary >= 0.5

    def test_out_of_range(self):
        with pytest.raises(ContractViolation):
            mix_dominant(np.zeros(2), np.zeros(2), 1.5)


class TestConfig:
    def test_probability_range(self):
        with pytest.raises(ConfigurationError):
            AugmentationConfig(p_delete=1.5)
        with pytest.raises(ConfigurationError):
            AugmentationConfig(p_query=-0.1)


def labelled_sequence(n=6, dim=4, n_relevant=4, seed=2):
    ls = LabelSpace((0, 1))
    rng = RngStream(seed, "seq")
    feats = rng.normal(size=(n, dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    q = rng.normal(size=dim)
    q /= np.linalg.norm(q)
    cat_map = {i: i % 2 for i in range(n_relevant)}
    return build_sequence(q, feats, list(range(n)), n, label_space=ls,
                          category_map=cat_map), ls


class TestAugmentSequence:
    def test_identity_config(self):
        seq, ls = labelled_sequence()
        cfg = AugmentationConfig(p_query=0.0, p_image=0.0,
                                 p_delete=0.0, p_copy=0.0)
        out = augment_sequence(seq, cfg, RngStream(3, "a"), ls.irrelevant)
        assert np.array_equal(out.tokens, seq.tokens)
        assert np.array_equal(out.labels, seq.labels)
        assert out.image_ids == seq.image_ids

    def test_disabled_returns_input(self):
        seq, ls = labelled_sequence()
        cfg = AugmentationConfig(enabled=False)
        assert augment_sequence(seq, cfg, RngStream(3, "a"),
                                ls.irrelevant) is seq

    def test_total_deletion(self):
        seq, ls = labelled_sequence()
        cfg = AugmentationConfig(p_query=0.0, p_image=0.0,
                                 p_delete=1.0, p_copy=0.0)
        out = augment_sequence(seq, cfg, RngStream(3, "a"), ls.irrelevant)
        assert np.array_equal(out.tokens[0], seq.tokens[0])
        assert np.all(out.tokens[1:] == 0.0)
        assert all(i is None for i in out.image_ids)
        assert all(l == ls.irrelevant for l in out.labels[1:])

    def test_input_untouched(self):
        seq, ls = labelled_sequence()
        snapshot = seq.tokens.copy()
        augment_sequence(seq, AugmentationConfig(), RngStream(4, "a"),
                         ls.irrelevant)
        assert np.array_equal(seq.tokens, snapshot)

    def test_query_mixup_only(self):
        seq, ls = labelled_sequence()
        cfg = AugmentationConfig(p_query=1.0, p_image=0.0,
                                 p_delete=0.0, p_copy=0.0)
        out = augment_sequence(seq, cfg, RngStream(5, "a"), ls.irrelevant)
        assert not np.array_equal(out.tokens[0], seq.tokens[0])
        assert np.array_equal(out.tokens[1:], seq.tokens[1:])

    def test_image_mixup_touches_only_relevant(self):
        seq, ls = labelled_sequence()
        cfg = AugmentationConfig(p_query=0.0, p_image=1.0,
                                 p_delete=0.0, p_copy=0.0)
        out = augment_sequence(seq, cfg, RngStream(6, "a"), ls.irrelevant)
        for i in range(seq.n_image_rows):
            row = i + 1
            if seq.labels[row] < ls.irrelevant:
                assert not np.array_equal(out.tokens[row], seq.tokens[row])
            else:
                assert np.array_equal(out.tokens[row], seq.tokens[row])

    def test_copy_inherits_label_adjacent(self):
        # one real token, budget 3: copy must land right after its source
        ls = LabelSpace((0,))
        tokens = np.zeros((4, 2))
        tokens[0] = [1.0, 0.0]
        tokens[1] = [0.8, 0.6]
        seq = TokenSequence(tokens, [42, None, None],
                            np.array([0.8, -np.inf, -np.inf]),
                            np.array([ls.query, 0, ls.irrelevant,
                                      ls.irrelevant]))
        cfg = AugmentationConfig(p_query=0.0, p_image=0.0,
                                 p_delete=0.0, p_copy=1.0)
        out = augment_sequence(seq, cfg, RngStream(7, "a"), ls.irrelevant)
        assert out.image_ids[:2] == [42, 42]
        assert np.array_equal(out.tokens[1], out.tokens[2])
        assert out.labels[1] == out.labels[2] == 0
        assert out.image_ids[2] is None

    def test_copy_overflow_truncates_to_budget(self):
        seq, ls = labelled_sequence(n=6)
        cfg = AugmentationConfig(p_query=0.0, p_image=0.0,
                                 p_delete=0.0, p_copy=1.0)
        out = augment_sequence(seq, cfg, RngStream(8, "a"), ls.irrelevant)
        assert out.tokens.shape == seq.tokens.shape
        assert len(out.image_ids) == seq.n_image_rows
        assert all(i is not None for i in out.image_ids)
        # kept rows remain in non-increasing similarity order
        assert all(out.sims[i] >= out.sims[i + 1]
                   for i in range(len(out.sims) - 1))

    def test_labels_stay_synchronized(self):
        for seed in range(25):
            seq, ls = labelled_sequence(seed=seed + 10)
            out = augment_sequence(seq, AugmentationConfig(),
                                   RngStream(seed, "a"), ls.irrelevant)
            assert out.labels[0] == ls.query
            for i in range(out.n_image_rows):
                if out.image_ids[i] is None:
                    assert out.labels[i + 1] == ls.irrelevant
                    assert np.all(out.tokens[i + 1] == 0.0)
                else:
                    assert out.labels[i + 1] <= ls.irrelevant

    def test_unlabelled_rejected(self):
        seq, ls = labelled_sequence()
        bare = TokenSequence(seq.tokens, seq.image_ids, seq.sims, None)
        with pytest.raises(ContractViolation):
            augment_sequence(bare, AugmentationConfig(), RngStream(0, "a"),
                             ls.irrelevant)

    def test_seed_determinism(self):
        seq, ls = labelled_sequence()
        a = augment_sequence(seq, AugmentationConfig(), RngStream(9, "a"),
                             ls.irrelevant)
        b = augment_sequence(seq, AugmentationConfig(), RngStream(9, "a"),
                             ls.irrelevant)
        assert np.array_equal(a.tokens, b.tokens)
        assert np.array_equal(a.labels, b.labels)


class TestFrequencies:
    def test_empirical_rates_smoke(self):
        # quick 2000-sequence check at looser tolerance; the full 1e5-sequence
        # +-0.01 version lives in the acceptance suite
        cfg = AugmentationConfig()
        stats = new_stats()
        rng = RngStream(17, "freq")
        seq, ls = labelled_sequence(n=6)
        for _ in range(2000):
            augment_sequence(seq, cfg, rng.child(str(stats["sequences"])),
                             ls.irrelevant, stats=stats)
        assert stats["query_mixed"] / stats["sequences"] == \
            pytest.approx(cfg.p_query, abs=0.05)
        assert stats["deleted"] / stats["tokens"] == \
            pytest.approx(cfg.p_delete, abs=0.05)
        assert stats["copied"] / stats["copy_candidates"] == \
            pytest.approx(cfg.p_copy, abs=0.05)
        assert stats["image_mixed"] / stats["image_candidates"] == \
            pytest.approx(cfg.p_image, abs=0.05)

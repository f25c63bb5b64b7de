"""Synthetic domain: determinism, stream isolation, oracles, corpora."""

import os

import numpy as np
import pytest

from csplab import synthworld as sw
from csplab.synthworld.sampling import token_distribution


@pytest.fixture(scope="module")
def spec():
    return sw.make_domain(17)


@pytest.fixture(scope="module")
def sharp_spec():
    # the separability settings used by the reference experiment config
    return sw.make_domain(17, segment_len=5, content_scale=3.0, tau_range=(0.5, 0.9))


class TestMakeDomain:
    def test_same_seed_byte_identical(self, tmp_path, spec):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        spec.save(p1)
        sw.make_domain(17).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_two_seeds_differ(self, spec):
        assert sw.make_domain(18).spec_hash() != spec.spec_hash()

    def test_adding_speaker_is_stream_isolated(self, spec):
        bigger = sw.make_domain(17, n_speakers=41)
        np.testing.assert_array_equal(bigger.speaker_bias[:40], spec.speaker_bias)
        np.testing.assert_array_equal(bigger.content, spec.content)
        np.testing.assert_array_equal(bigger.transition, spec.transition)

    def test_spec_file_round_trip(self, tmp_path, spec):
        p = tmp_path / "spec.json"
        spec.save(p)
        loaded = sw.DomainSpec.load(p)
        np.testing.assert_array_equal(loaded.content, spec.content)
        np.testing.assert_array_equal(loaded.emotion_temp, spec.emotion_temp)
        assert loaded.spec_hash() == spec.spec_hash()

    def test_zero_vocab_rejected(self):
        with pytest.raises(ValueError):
            sw.make_domain(1, v_s=1)


class TestSampleUtterance:
    def test_degenerate_distribution(self, spec):
        dom = sw.make_domain(3)
        dom.content[2] = -30.0
        dom.content[2, 7] = 30.0      # logit gap >= 20 -> deterministic token
        dom.alpha = dom.beta = dom.gamma = 0.0
        u = sw.sample_utterance(dom, 0, 0, [2, 2], seed=5)
        assert u.speech == [7] * 8

    def test_length_contract(self, spec):
        u = sw.sample_utterance(spec, 1, 2, [0, 5, 9], seed=1)
        assert len(u.speech) == 3 * spec.segment_len

    def test_seed_determinism(self, spec):
        a = sw.sample_utterance(spec, 1, 2, [0, 5, 9], seed=[4, 2])
        b = sw.sample_utterance(spec, 1, 2, [0, 5, 9], seed=[4, 2])
        assert a.speech == b.speech

    def test_unknown_factors_rejected(self, spec):
        with pytest.raises(ValueError):
            sw.sample_utterance(spec, spec.n_speakers, 0, [1], seed=0)
        with pytest.raises(ValueError):
            sw.sample_utterance(spec, 0, spec.n_emotions, [1], seed=0)

    def test_empirical_matches_analytic_distribution(self, spec):
        """First-segment-token frequencies vs the analytic softmax, 50k draws."""
        c, s, e = 4, 3, 0
        p = token_distribution(spec, c, s, e, prev=0)
        rng = np.random.default_rng(99)
        u = rng.random(50_000)
        cum = np.cumsum(p)
        draws = np.searchsorted(cum, u * cum[-1], side="left")
        counts = np.bincount(draws, minlength=spec.v_s)
        tv = 0.5 * np.abs(counts / 50_000 - p).sum()
        assert tv < 0.01

    def test_sampler_agrees_with_token_distribution(self, spec):
        """The kernel's per-token distribution equals the analytic oracle:
        empirical first-token frequencies from the real sampler."""
        tokens = [sw.sample_utterance(spec, 3, 0, [4], seed=[123, i]).speech[0]
                  for i in range(8000)]
        p = token_distribution(spec, 4, 3, 0, prev=0)
        counts = np.bincount(tokens, minlength=spec.v_s)
        tv = 0.5 * np.abs(counts / 8000 - p).sum()
        assert tv < 0.03


class TestBuildCorpora:
    @pytest.fixture(scope="class")
    def built(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("corp")
        dom = sw.make_domain(21, n_speakers=12, n_emotions=6)
        layout = sw.CorpusLayout(source_speakers=6, source_emotions=2,
                                 target_speakers=3, target_emotions=2,
                                 n_source=400, target_train=60, target_test=20,
                                 target_text_vocab=8)
        return dom, layout, sw.build_corpora(dom, layout, out), out

    def test_nine_to_one_source_split(self, built):
        _, _, res, _ = built
        assert res["pretrain"][0].count == 360
        assert res["source-heldout"][0].count == 40   # 9:1

    def test_target_test_pairs_in_train(self, built):
        _, _, res, _ = built
        train_pairs = {(u.speaker, u.emotion) for u in res["target-train"][1]}
        test_pairs = {(u.speaker, u.emotion) for u in res["target-test"][1]}
        assert test_pairs <= train_pairs

    def test_target_vocab_subset(self, built):
        dom, layout, res, _ = built
        vocab = set(res["target-train"][0].text_vocab)
        assert len(vocab) == 8
        assert vocab < set(range(dom.v_t))
        used = {t for u in res["target-train"][1] for t in u.text}
        assert used <= vocab

    def test_rosters_disjoint(self, built):
        _, _, res, _ = built
        src_s = set(res["pretrain"][0].speakers)
        tgt_s = set(res["target-train"][0].speakers)
        trf_s = set(res["transfer-train"][0].speakers)
        assert not (src_s & tgt_s) and not (src_s & trf_s) and not (tgt_s & trf_s)
        src_e = set(res["pretrain"][0].emotions)
        tgt_e = set(res["target-train"][0].emotions)
        trf_e = set(res["transfer-train"][0].emotions)
        assert not (src_e & tgt_e) and not (src_e & trf_e) and not (tgt_e & trf_e)

    def test_roster_overflow_rejected(self, built):
        dom, layout, _, _ = built
        bad = sw.CorpusLayout(source_speakers=10, target_speakers=2)
        with pytest.raises(ValueError):
            sw.build_corpora(dom, bad, "/tmp/unused")

    def test_files_round_trip(self, built):
        _, _, res, out = built
        loaded = sw.load_corpora(out)
        for split, (man, utts) in res.items():
            lm, lu = loaded[split]
            assert lm.count == man.count
            assert [u.__dict__ for u in lu] == [u.__dict__ for u in utts]


class TestBayesClassify:
    def test_single_candidate_posterior_one(self, spec):
        u = sw.sample_utterance(spec, 2, 1, [3, 4], seed=1)
        ps, pe = sw.bayes_classify(spec, u, [2], [1])
        assert ps[0] == pytest.approx(1.0, abs=1e-12)
        assert pe[0] == pytest.approx(1.0, abs=1e-12)

    def test_posteriors_sum_to_one(self, spec):
        u = sw.sample_utterance(spec, 5, 2, [1, 2, 3], seed=2)
        ps, pe = sw.bayes_classify(spec, u, [0, 5, 9], [0, 1, 2])
        assert abs(ps.sum() - 1) < 1e-9 and abs(pe.sum() - 1) < 1e-9

    def test_hand_enumerated_two_speaker_case(self, spec):
        u = sw.sample_utterance(spec, 1, 0, [6], seed=3)   # T_A = 4 with L=4
        ps, _ = sw.bayes_classify(spec, u, [1, 2], [0])
        # independent oracle: enumerate token likelihoods directly
        lik = []
        for s in (1, 2):
            p = 1.0
            prev = 0
            for x in u.speech:
                dist = token_distribution(spec, 6, s, 0, prev)
                p *= dist[x]
                prev = x
            lik.append(p)
        expect = np.array(lik) / sum(lik)
        np.testing.assert_allclose(ps, expect, atol=1e-9)

    def test_separability_floor(self, sharp_spec):
        """Bayes accuracy well above chance for speakers; emotion capped at
        an achievable bound (5x chance exceeds 1 for a 4-emotion roster)."""
        rng = np.random.default_rng(5)
        ok_s = ok_e = 0
        n = 60
        for i in range(n):
            s = int(rng.integers(0, 32))
            e = int(rng.integers(0, 4))
            text = rng.integers(0, 32, size=int(rng.integers(3, 9)))
            u = sw.sample_utterance(sharp_spec, s, e, text, seed=[55, i])
            ps, pe = sw.bayes_classify(sharp_spec, u, list(range(32)), list(range(4)))
            ok_s += ps.argmax() == s
            ok_e += pe.argmax() == e
        assert ok_s / n >= 5 * (1 / 32)
        assert ok_e / n >= 0.9


class TestOracleTranscribe:
    def test_recovers_degenerate_text(self):
        dom = sw.make_domain(3)
        dom.content[:] = -30.0
        for c in range(dom.v_t):
            dom.content[c, c % dom.v_s] = 30.0
        dom.alpha = dom.beta = dom.gamma = 0.0
        u = sw.sample_utterance(dom, 0, 0, [3, 1, 4], seed=9)
        np.testing.assert_array_equal(
            sw.oracle_transcribe(dom, u.speech, 0, 0), [3, 1, 4])

    def test_output_length(self, spec):
        u = sw.sample_utterance(spec, 0, 0, [1, 2, 3, 4], seed=0)
        assert sw.oracle_transcribe(spec, u.speech, 0, 0).shape == (4,)

    def test_indivisible_length_rejected(self, spec):
        with pytest.raises(ValueError):
            sw.oracle_transcribe(spec, [1, 2, 3], 0, 0)

    def test_self_transcription_regression(self, sharp_spec):
        """Frozen regression constant, measured once at the reference spec
        (seed 17, sharp settings): token accuracy 0.921 on 400 utterances.
        Assert a small safety margin below the measurement."""
        rng = np.random.default_rng(123)
        correct = total = 0
        for i in range(400):
            s = int(rng.integers(0, 32))
            e = int(rng.integers(0, 4))
            text = rng.integers(0, 32, size=int(rng.integers(3, 9)))
            u = sw.sample_utterance(sharp_spec, s, e, text, seed=[7, i])
            hyp = sw.oracle_transcribe(sharp_spec, u.speech, s, e)
            correct += int((hyp == np.asarray(u.text)).sum())
            total += len(u.text)
        assert correct / total >= 0.90

    def test_marginal_flag(self, sharp_spec):
        u = sw.sample_utterance(sharp_spec, 2, 1, [5, 8], seed=4)
        hyp = sw.oracle_transcribe(sharp_spec, u.speech, 2, 1,
                                   marginal_pairs=[(2, 1), (3, 1), (2, 0)])
        assert hyp.shape == (2,)

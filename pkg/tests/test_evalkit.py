"""Metrics, reference evaluator, adaptation rounds, timing bench."""

import numpy as np
import pytest

from csplab import evalkit as ek
from csplab import synthworld as sw
from csplab import codeclm as clm
from csplab.ftstrat import FineTunePlan
from csplab.synthworld import Utterance


class TestCosine:
    def test_identical(self):
        assert ek.cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert ek.cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)

    def test_hand_value(self):
        assert ek.cosine_similarity([1, 2, 2], [2, 1, 2]) == pytest.approx(8 / 9, abs=1e-6)

    def test_both_zero_warns(self):
        with pytest.warns(RuntimeWarning):
            assert ek.cosine_similarity([0, 0], [0, 0]) == 0.0

    def test_symmetry(self, rng):
        u, v = rng.normal(size=6), rng.normal(size=6)
        assert ek.cosine_similarity(u, v) == ek.cosine_similarity(v, u)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ek.cosine_similarity([1, 2], [1, 2, 3])


class TestLevenshteinTer:
    def test_perfect(self):
        assert ek.levenshtein([1, 2, 3], [1, 2, 3]) == 0

    def test_empty_hypothesis(self):
        assert ek.levenshtein([], [1, 2, 3]) == 3

    def test_substitution(self):
        assert ek.levenshtein([5, 7, 9], [5, 7, 2]) == 1

    def test_mixed_ops(self):
        assert ek.levenshtein([1, 2, 3, 4], [2, 3, 5]) == 2

    def test_ter_values(self):
        spec = sw.make_domain(3)
        u = sw.sample_utterance(spec, 0, 0, [1, 2, 3], seed=1)
        assert ek.transcript_error_rate(
            spec, u.speech, sw.oracle_transcribe(spec, u.speech, 0, 0), 0, 0) == 0.0
        with pytest.raises(ValueError):
            ek.transcript_error_rate(spec, u.speech, [], 0, 0)
        with pytest.raises(ValueError):
            ek.transcript_error_rate(spec, u.speech[:-1], [1, 2, 3], 0, 0)


class TestMinMaxNormalize:
    def test_example(self):
        out, flat = ek.min_max_normalize([2, 4, 6])
        np.testing.assert_allclose(out, [0, 0.5, 1])
        assert not flat

    def test_constant_flagged(self):
        out, flat = ek.min_max_normalize([3, 3])
        np.testing.assert_array_equal(out, [0, 0])
        assert flat

    def test_bounds(self, rng):
        out, _ = ek.min_max_normalize(rng.normal(size=17))
        assert out.min() == 0.0 and out.max() == 1.0

    def test_idempotent(self, rng):
        s = rng.normal(size=9)
        once, _ = ek.min_max_normalize(s)
        twice, _ = ek.min_max_normalize(once)
        np.testing.assert_allclose(once, twice, atol=1e-12)


def _mini_world(seed=5):
    spec = sw.make_domain(seed, v_t=12, v_s=24, n_speakers=6, n_emotions=4,
                          segment_len=4, content_scale=3.0, alpha=1.4,
                          tau_range=(0.5, 0.85))
    rng = np.random.default_rng(seed)
    utts = []
    for i in range(120):
        s = int(rng.integers(0, 6))
        e = int(rng.integers(0, 4))
        text = rng.integers(0, 12, size=int(rng.integers(2, 5)))
        utts.append(sw.sample_utterance(spec, s, e, text, seed=[seed, 3, i],
                                        uid=f"m-{i:04d}"))
    return spec, utts


class TestReferenceEvaluator:
    @pytest.fixture(scope="class")
    def world(self):
        return _mini_world()

    def test_same_seed_identical_hash(self, world):
        spec, utts = world
        kw = dict(v_s=spec.v_s, seed=4, epochs=2, emb_dim=16, channels=16,
                  attn_dim=16, accuracy_floor=0.0)
        e1 = ek.train_reference_evaluator(utts, **kw)
        e2 = ek.train_reference_evaluator(utts, **kw)
        assert e1.state_hash() == e2.state_hash()

    def test_embedding_determinism_and_shape(self, world):
        spec, utts = world
        ev = ek.train_reference_evaluator(utts, v_s=spec.v_s, seed=4, epochs=1,
                                          emb_dim=16, channels=16, attn_dim=16,
                                          accuracy_floor=0.0)
        a = ev.embed("speaker", utts[0].speech)
        b = ev.embed("speaker", utts[0].speech)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (32,)

    def test_accuracy_floor_enforced(self, world):
        spec, utts = world
        with pytest.raises(ek.EvaluatorAccuracyError):
            ek.train_reference_evaluator(utts, v_s=spec.v_s, seed=4, epochs=0,
                                         emb_dim=16, channels=16, attn_dim=16,
                                         accuracy_floor=0.99)

    def test_characteristic_similarity_contracts(self, world):
        spec, utts = world
        ev = ek.train_reference_evaluator(utts, v_s=spec.v_s, seed=4, epochs=1,
                                          emb_dim=16, channels=16, attn_dim=16,
                                          accuracy_floor=0.0)
        u = utts[0]
        assert ek.characteristic_similarity(ev, "speaker", u.speech, u.speech) \
            == pytest.approx(1.0)
        a = ek.characteristic_similarity(ev, "emotion", u.speech, utts[1].speech)
        b = ek.characteristic_similarity(ev, "emotion", utts[1].speech, u.speech)
        assert a == pytest.approx(b, abs=1e-12)
        with pytest.raises(ValueError):
            ek.characteristic_similarity(ev, "speaker", [], u.speech)


class TestEvaluateAdaptation:
    def test_empty_test_set_is_error(self, rng):
        spec, utts = _mini_world()
        m = clm.CodecLM(clm.ModelConfig(text_vocab=12, speech_vocab=24), seed=0)
        with pytest.raises(ValueError):
            ek.generate_for_corpus(m, [], ek.prompt_map(utts))

    def test_missing_prompt_is_error(self):
        spec, utts = _mini_world()
        m = clm.CodecLM(clm.ModelConfig(text_vocab=12, speech_vocab=24), seed=0)
        lonely = [u for u in utts if (u.speaker, u.emotion) == (0, 0)][:1]
        pool = [u for u in utts if (u.speaker, u.emotion) != (0, 0)]
        with pytest.raises(KeyError):
            ek.generate_for_corpus(m, lonely, ek.prompt_map(pool))

    def test_deterministic_row(self):
        spec, utts = _mini_world()
        ev = ek.train_reference_evaluator(utts, v_s=spec.v_s, seed=4, epochs=1,
                                          emb_dim=16, channels=16, attn_dim=16,
                                          accuracy_floor=0.0)
        m = clm.CodecLM(clm.ModelConfig(text_vocab=12, speech_vocab=24), seed=0)
        test, pool = utts[:6], utts[6:]
        r1 = ek.evaluate_adaptation(m, test, pool, ev, spec, seed=11)
        r2 = ek.evaluate_adaptation(m, test, pool, ev, spec, seed=11)
        assert (r1.ss, r1.ers, r1.ter_target) == (r2.ss, r2.ers, r2.ter_target)
        assert np.isnan(r1.ter_source)

    def test_prompt_map_lowest_id(self):
        _, utts = _mini_world()
        pm = ek.prompt_map(utts)
        for (s, e), u in pm.items():
            ids = [x.id for x in utts if (x.speaker, x.emotion) == (s, e)]
            assert u.id == min(ids)


class TestBenchSteps:
    def _setup(self):
        m = clm.CodecLM(clm.ModelConfig(n_layers=2, model_dim=16, inner_dim=32,
                                        n_heads=2, text_vocab=8, speech_vocab=12,
                                        max_seq_len=64), seed=1)
        m.params["lm_head.w"].tensor.data = np.random.default_rng(0).normal(
            size=(16, 12)) * 0.2
        rng = np.random.default_rng(2)
        corpus = [Utterance(f"b{i:02d}", int(rng.integers(2)), 0,
                            rng.integers(0, 8, size=3).tolist(),
                            rng.integers(0, 12, size=12).tolist())
                  for i in range(24)]
        return m, corpus

    def test_reports_positive_rate(self):
        m, corpus = self._setup()
        plan = FineTunePlan("full", "full", epochs=1)
        r = ek.bench_steps(m, plan, corpus, n_steps=8, warmup=2, batch_size=4)
        assert r["seconds"] > 0
        assert r["steps_per_sec"] == pytest.approx(8 / r["seconds"])

    def test_nsteps_validation(self):
        m, corpus = self._setup()
        with pytest.raises(ValueError):
            ek.bench_steps(m, FineTunePlan("full", "full"), corpus, n_steps=0)

    def test_stability_bound(self):
        # same plan measured twice varies < 20% (sized to dominate jitter)
        m, corpus = self._setup()
        plan = FineTunePlan("full", "full", epochs=1)
        a = ek.bench_steps(m, plan, corpus, n_steps=60, warmup=10, batch_size=8)
        b = ek.bench_steps(m, plan, corpus, n_steps=60, warmup=10, batch_size=8)
        assert abs(a["seconds"] - b["seconds"]) / max(a["seconds"], b["seconds"]) < 0.2

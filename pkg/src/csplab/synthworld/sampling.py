"""Utterance records and the seeded generative sampler."""

from dataclasses import dataclass

import numpy as np

from csplab import kernels


@dataclass
class Utterance:
    id: str
    speaker: int
    emotion: int
    text: list
    speech: list

    def __post_init__(self):
        self.text = [int(t) for t in self.text]
        self.speech = [int(t) for t in self.speech]

    def text_array(self):
        return np.asarray(self.text, dtype=np.int64)

    def speech_array(self):
        return np.asarray(self.speech, dtype=np.int64)


def token_distribution(spec, c, s, e, prev):
    """Analytic per-token distribution; the oracle for the sampler."""
    logits = (spec.content[c] + spec.combined_bias(s, e)
              + spec.gamma * spec.transition[prev]) / spec.emotion_temp[e]
    p = np.exp(logits - logits.max())
    return p / p.sum()


def sample_utterance(spec, s, e, text, seed, uid="utt"):
    """Draw T_S * L speech tokens for the given text under factors (s, e).

    The previous-token chain starts at reserved token 0 and runs across the
    whole utterance. Fully determined by (spec, s, e, text, seed).
    """
    if not 0 <= s < spec.n_speakers:
        raise ValueError(f"unknown speaker {s}")
    if not 0 <= e < spec.n_emotions:
        raise ValueError(f"unknown emotion {e}")
    text = np.asarray(text, dtype=np.int64)
    if text.size == 0:
        raise ValueError("empty text")
    if text.min() < 0 or text.max() >= spec.v_t:
        raise ValueError("text token out of vocabulary")
    g_rows = np.repeat(spec.content[text], spec.segment_len, axis=0)
    bias = spec.combined_bias(s, e)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    uniforms = rng.random(g_rows.shape[0])
    speech = kernels.sample_speech(
        np.ascontiguousarray(g_rows), bias, spec.transition,
        float(spec.gamma), float(1.0 / spec.emotion_temp[e]), uniforms)
    return Utterance(id=uid, speaker=int(s), emotion=int(e),
                     text=list(text), speech=list(speech))

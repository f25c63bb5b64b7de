"""Exact evaluators for the synthetic domain: Bayes factors and transcription."""

import numpy as np

from csplab import kernels


def _prev_chain(speech):
    prevs = np.empty_like(speech)
    prevs[0] = 0
    prevs[1:] = speech[:-1]
    return prevs


def _logsumexp(a, axis=None):
    if axis is None:
        m = float(a.max())
        return float(np.log(np.exp(a - m).sum()) + m)
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def sequence_loglik(spec, text, speech, s, e):
    """Exact log-likelihood of observed speech under factors (s, e)."""
    text = np.asarray(text, dtype=np.int64)
    speech = np.ascontiguousarray(np.asarray(speech, dtype=np.int64))
    g_rows = np.ascontiguousarray(np.repeat(spec.content[text], spec.segment_len, axis=0))
    return kernels.token_loglik_sum(
        speech, g_rows, spec.combined_bias(s, e), spec.transition,
        _prev_chain(speech), float(spec.gamma),
        float(1.0 / spec.emotion_temp[e]))


def bayes_classify(spec, utterance, speakers, emotions):
    """Posterior over candidate speakers and emotions given known text.

    Uniform prior over the candidate grid; each marginal sums to one.
    Returns (speaker_posterior, emotion_posterior) aligned with the inputs.
    """
    speakers = list(speakers)
    emotions = list(emotions)
    if not speakers or not emotions:
        raise ValueError("candidate lists must be non-empty")
    ll = np.empty((len(speakers), len(emotions)))
    for i, s in enumerate(speakers):
        for j, e in enumerate(emotions):
            ll[i, j] = sequence_loglik(spec, utterance.text, utterance.speech, s, e)
    joint = ll - _logsumexp(ll.ravel())
    p_speaker = np.exp(_logsumexp(joint, axis=1))
    p_emotion = np.exp(_logsumexp(joint, axis=0))
    return p_speaker / p_speaker.sum(), p_emotion / p_emotion.sum()


def oracle_transcribe(spec, speech, s, e, marginal_pairs=None):
    """Recover text: per segment, argmax_c sum of token log-probs.

    Conditions on the intended (s, e) by default; pass marginal_pairs (a list
    of (s, e) tuples) to marginalize instead. Ties break to the lowest c.
    """
    speech = np.ascontiguousarray(np.asarray(speech, dtype=np.int64))
    if speech.size % spec.segment_len:
        raise ValueError(f"speech length {speech.size} not divisible by segment_len")
    prevs = _prev_chain(speech)
    if marginal_pairs is None:
        scores = kernels.text_scores(
            speech, prevs, spec.content, spec.combined_bias(s, e),
            spec.transition, float(spec.gamma), float(1.0 / spec.emotion_temp[e]))
    else:
        stack = [kernels.text_scores(
            speech, prevs, spec.content, spec.combined_bias(ms, me),
            spec.transition, float(spec.gamma), float(1.0 / spec.emotion_temp[me]))
            for ms, me in marginal_pairs]
        scores = _logsumexp(np.stack(stack), axis=0)
    n_seg = speech.size // spec.segment_len
    seg_scores = scores.reshape(n_seg, spec.segment_len, spec.v_t).sum(axis=1)
    return seg_scores.argmax(axis=1)

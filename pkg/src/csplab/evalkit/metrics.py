"""Similarity and error-rate metrics."""

import warnings

import numpy as np

from csplab.synthworld import oracle_transcribe


def cosine_similarity(u, v):
    """Cosine in [-1, 1]; two zero vectors score 0 with a warning."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 and nv == 0.0:
        warnings.warn("cosine of two zero vectors, returning 0", RuntimeWarning)
        return 0.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def rescale_similarity(c):
    """[-1, 1] -> [0, 1] for percentage-style reporting."""
    return (c + 1.0) / 2.0


def characteristic_similarity(evaluator, task, generated, reference):
    """Rescaled cosine between frozen-evaluator embeddings of two sequences."""
    if len(generated) == 0 or len(reference) == 0:
        raise ValueError("cannot score zero-length speech")
    a, b = evaluator.embed_batch(task, [list(generated), list(reference)])
    return rescale_similarity(cosine_similarity(a, b))


def levenshtein(a, b):
    """Edit distance between two token sequences."""
    a, b = list(a), list(b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def transcript_error_rate(spec, generated_speech, intended_text, s, e):
    """Levenshtein(oracle transcript, intended text) / len(intended text)."""
    if len(intended_text) == 0:
        raise ValueError("intended text must be non-empty")
    hyp = oracle_transcribe(spec, generated_speech, s, e)
    return levenshtein(hyp.tolist(), list(intended_text)) / len(intended_text)


def min_max_normalize(series):
    """(S - min) / (max - min); constant series flatten to zero, flagged."""
    s = np.asarray(series, dtype=np.float64)
    if s.size < 1:
        raise ValueError("empty series")
    lo, hi = float(s.min()), float(s.max())
    if hi == lo:
        return np.zeros_like(s), True
    return (s - lo) / (hi - lo), False

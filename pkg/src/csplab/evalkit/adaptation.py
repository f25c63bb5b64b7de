"""Adaptation scoring: train-set prompting, SS/ERS, target and source TER."""

from dataclasses import dataclass

import numpy as np

from csplab.codeclm import generate_batch, stacked_weights
from csplab.synthworld import oracle_transcribe
from .metrics import cosine_similarity, rescale_similarity, levenshtein


def prompt_map(pool):
    """Deterministic prompt choice: the lowest-id utterance per (s, e)."""
    out = {}
    for u in sorted(pool, key=lambda u: u.id):
        out.setdefault((u.speaker, u.emotion), u)
    return out


def generate_for_corpus(model, utterances, prompts, decode="sample",
                        temperature=1.0, seed=0, weights=None):
    """Generate reference-length speech for each utterance's text.

    Prompts come from the matching-(s, e) pool entry; per-item sampling seeds
    are derived from (seed, corpus position) so batching is irrelevant.
    """
    if not utterances:
        raise ValueError("cannot evaluate an empty corpus")
    sw = weights if weights is not None else stacked_weights(model)
    groups = {}
    for idx, u in enumerate(utterances):
        key = (u.speaker, u.emotion)
        if key not in prompts:
            raise KeyError(f"no prompt with speaker/emotion {key}")
        groups.setdefault(len(u.speech), []).append(idx)
    gen = [None] * len(utterances)
    for out_len, idxs in sorted(groups.items()):
        items, seeds = [], []
        for i in idxs:
            u = utterances[i]
            p = prompts[(u.speaker, u.emotion)]
            items.append((list(p.text) + list(u.text), list(p.speech), out_len))
            seeds.append([seed, 61, i])
        rows = generate_batch(model, items, mode=decode, temperature=temperature,
                              seeds=seeds if decode == "sample" else None,
                              weights=sw)
        for i, row in zip(idxs, rows):
            gen[i] = row
    return gen


def mean_ter(spec, utterances, generated):
    total = 0.0
    for u, g in zip(utterances, generated):
        hyp = oracle_transcribe(spec, g, u.speaker, u.emotion)
        total += levenshtein(hyp.tolist(), u.text) / len(u.text)
    return total / len(utterances)


@dataclass
class EvalRow:
    ss: float
    ers: float
    ter_target: float
    ter_source: float


def evaluate_adaptation(model, test_corpus, prompt_pool, evaluator, spec,
                        source_corpus=None, source_prompt_pool=None,
                        decode="sample", temperature=1.0, seed=0,
                        ref_embeddings=None, weights=None):
    """One report row: mean SS/ERS/TER over the test set (+ source TER).

    ref_embeddings, when given, caches {task: [embedding per test utterance]}
    for the ground-truth references. Deterministic in (checkpoint, seed).
    """
    sw = weights if weights is not None else stacked_weights(model)
    gen = generate_for_corpus(model, test_corpus, prompt_map(prompt_pool),
                              decode=decode, temperature=temperature,
                              seed=seed, weights=sw)
    if ref_embeddings is None:
        ref_embeddings = reference_embeddings(evaluator, test_corpus)
    ss_total = ers_total = 0.0
    for task, acc in (("speaker", "ss"), ("emotion", "ers")):
        embs = evaluator.embed_batch(task, gen)
        vals = [rescale_similarity(cosine_similarity(g_emb, r_emb))
                for g_emb, r_emb in zip(embs, ref_embeddings[task])]
        if acc == "ss":
            ss_total = float(np.mean(vals))
        else:
            ers_total = float(np.mean(vals))
    ter_t = mean_ter(spec, test_corpus, gen)
    ter_s = float("nan")
    if source_corpus:
        gen_s = generate_for_corpus(model, source_corpus,
                                    prompt_map(source_prompt_pool),
                                    decode=decode, temperature=temperature,
                                    seed=seed + 1, weights=sw)
        ter_s = mean_ter(spec, source_corpus, gen_s)
    return EvalRow(ss=ss_total, ers=ers_total, ter_target=ter_t, ter_source=ter_s)


def reference_embeddings(evaluator, corpus):
    return {task: evaluator.embed_batch(task, [u.speech for u in corpus])
            for task in ("speaker", "emotion")}

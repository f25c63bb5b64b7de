"""Frozen reference evaluator: model-independent speaker/emotion embedders.

Each head is a trainable speech-token embedding plus the probe head
architecture, trained as a classifier over the full roster and then frozen.
It never shares parameters with any TTS model, so metric differences across
strategies are attributable to the TTS model alone.
"""

import hashlib

import numpy as np

from csplab.charprobe import ProbeHead, ProbeHeadConfig
from csplab.gradcore import (
    Tensor, Tape, ParamGroup, AdamOptimizer, LrSchedule,
    add, cross_entropy_rows, embedding,
)


class EvaluatorAccuracyError(Exception):
    """Held-out accuracy below the trust floor; evaluation would be meaningless."""


class ReferenceEvaluator:
    def __init__(self, v_s, speakers, emotions, emb_dim=64, channels=64,
                 attn_dim=64, seed=0, dtype=np.float64):
        self.v_s = v_s
        self.speaker_ids = sorted(int(s) for s in speakers)
        self.emotion_ids = sorted(int(e) for e in emotions)
        self.speaker_index = {s: i for i, s in enumerate(self.speaker_ids)}
        self.emotion_index = {e: i for i, e in enumerate(self.emotion_ids)}
        self.heads = {}
        for task, classes, sub in (("speaker", len(self.speaker_ids), 41),
                                   ("emotion", len(self.emotion_ids), 42)):
            rng = np.random.default_rng(np.random.SeedSequence([seed, sub]))
            emb = ParamGroup(f"{task}.emb", Tensor(
                rng.normal(0.0, 0.5, size=(v_s, emb_dim)).astype(dtype), True))
            head = ProbeHead(ProbeHeadConfig(emb_dim, classes, channels=channels,
                                             attn_dim=attn_dim), seed * 100 + sub, dtype)
            self.heads[task] = (emb, head)

    def groups(self, task):
        emb, head = self.heads[task]
        return [emb] + head.groups()

    def freeze(self):
        for task in self.heads:
            for g in self.groups(task):
                g.trainable = False
                g.tensor.requires_grad = False

    def embed_batch(self, task, sequences):
        """Penultimate embeddings for speech-token sequences (any lengths)."""
        emb, head = self.heads[task]
        out = [None] * len(sequences)
        by_len = {}
        for i, s in enumerate(sequences):
            if len(s) == 0:
                raise ValueError("cannot embed a zero-length speech sequence")
            by_len.setdefault(len(s), []).append(i)
        for t, idxs in sorted(by_len.items()):
            ids = np.asarray([list(sequences[i]) for i in idxs], dtype=np.int64)
            vecs = head.embed(embedding(emb.tensor, ids)).data
            for row, i in enumerate(idxs):
                out[i] = np.asarray(vecs[row])
        return out

    def embed(self, task, sequence):
        return self.embed_batch(task, [sequence])[0]

    def logits_batch(self, task, ids):
        emb, head = self.heads[task]
        return head.logits(embedding(emb.tensor, ids))

    def state_items(self):
        for task in ("speaker", "emotion"):
            emb, head = self.heads[task]
            yield f"{task}.emb", emb.tensor.data
            for n, arr in head.state_items():
                yield f"{task}.{n}", arr

    def load_state(self, items):
        d = dict(items)
        for task in ("speaker", "emotion"):
            emb, head = self.heads[task]
            emb.tensor.data = np.array(d[f"{task}.emb"], dtype=emb.tensor.dtype)
            head.load_state((n[len(task) + 1:], arr) for n, arr in d.items()
                            if n.startswith(f"{task}.") and n != f"{task}.emb")

    def state_hash(self):
        h = hashlib.sha256()
        for n, arr in sorted(self.state_items()):
            h.update(n.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _holdout_split(utterances, every=10):
    """Deterministic stratified holdout: every k-th utterance per (s, e)."""
    groups = {}
    for i, u in enumerate(utterances):
        groups.setdefault((u.speaker, u.emotion), []).append(i)
    train_idx, held_idx = [], []
    for key in sorted(groups):
        for rank, i in enumerate(groups[key]):
            (held_idx if rank % every == every - 1 else train_idx).append(i)
    return train_idx, held_idx


def train_reference_evaluator(utterances, v_s, seed=0, epochs=8, batch_size=16,
                              peak_lr=1e-3, emb_dim=64, channels=64, attn_dim=64,
                              accuracy_floor=0.90, dtype=np.float64, log=None):
    """Train both heads on labeled utterances covering every roster id.

    Hard-fails (EvaluatorAccuracyError) when held-out accuracy of either
    task is below accuracy_floor: an untrustworthy evaluator must not be
    used to score adaptation runs.
    """
    speakers = sorted({u.speaker for u in utterances})
    emotions = sorted({u.emotion for u in utterances})
    ev = ReferenceEvaluator(v_s, speakers, emotions, emb_dim=emb_dim,
                            channels=channels, attn_dim=attn_dim,
                            seed=seed, dtype=dtype)
    train_idx, held_idx = _holdout_split(utterances)
    buckets = {}
    for i in train_idx:
        buckets.setdefault(len(utterances[i].speech), []).append(i)
    steps_per_epoch = sum(int(np.ceil(len(v) / batch_size)) for v in buckets.values())
    schedule = LrSchedule(peak_lr, max(steps_per_epoch * epochs, 2))
    groups = ev.groups("speaker") + ev.groups("emotion")
    opt = AdamOptimizer(groups, schedule)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 43]))
    for ep in range(epochs):
        batches = []
        for t in sorted(buckets):
            idxs = np.array(buckets[t])
            rng.shuffle(idxs)
            batches.extend(idxs[i:i + batch_size] for i in range(0, len(idxs), batch_size))
        order = rng.permutation(len(batches))
        total = 0.0
        for bi in order:
            batch = batches[bi]
            ids = np.asarray([utterances[i].speech for i in batch], dtype=np.int64)
            ys = np.array([ev.speaker_index[utterances[i].speaker] for i in batch])
            ye = np.array([ev.emotion_index[utterances[i].emotion] for i in batch])
            with Tape() as tape:
                loss = add(cross_entropy_rows(ev.logits_batch("speaker", ids), ys),
                           cross_entropy_rows(ev.logits_batch("emotion", ids), ye))
                tape.backward(loss)
            opt.step()
            total += float(loss.data)
        if log:
            log(f"evaluator epoch {ep + 1}/{epochs} loss {total / len(batches):.4f}")

    acc = held_out_accuracy(ev, [utterances[i] for i in held_idx], batch_size)
    if acc["speaker"] < accuracy_floor or acc["emotion"] < accuracy_floor:
        raise EvaluatorAccuracyError(
            f"held-out accuracy speaker={acc['speaker']:.3f} "
            f"emotion={acc['emotion']:.3f} below floor {accuracy_floor}")
    ev.freeze()
    ev.held_out_accuracy = acc
    return ev


def held_out_accuracy(ev, utterances, batch_size=16):
    ok = {"speaker": 0, "emotion": 0}
    buckets = {}
    for i, u in enumerate(utterances):
        buckets.setdefault(len(u.speech), []).append(i)
    for t in sorted(buckets):
        idxs = buckets[t]
        for i0 in range(0, len(idxs), batch_size):
            chunk = idxs[i0:i0 + batch_size]
            ids = np.asarray([utterances[i].speech for i in chunk], dtype=np.int64)
            for task, index, attr in (("speaker", ev.speaker_index, "speaker"),
                                      ("emotion", ev.emotion_index, "emotion")):
                pred = ev.logits_batch(task, ids).data.argmax(axis=1)
                truth = np.array([index[getattr(utterances[i], attr)] for i in chunk])
                ok[task] += int((pred == truth).sum())
    n = len(utterances)
    return {"speaker": ok["speaker"] / n, "emotion": ok["emotion"] / n}

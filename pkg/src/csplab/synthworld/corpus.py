"""Corpus layout, manifests, and JSON-Lines persistence."""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .sampling import Utterance, sample_utterance

# split ids for utterance seed streams
_SPLIT_IDS = {
    "pretrain": 0, "source-heldout": 1,
    "target-train": 2, "target-test": 3,
    "transfer-train": 4, "transfer-test": 5,
}


@dataclass
class CorpusLayout:
    """Roster partition and counts for the three disjoint domains.

    Speakers/emotions are partitioned by id: source takes the first block,
    the adaptation target the next, the transfer target the last. Target
    text is restricted to a small subset of the source text vocabulary.
    """
    source_speakers: int = 32
    source_emotions: int = 4
    target_speakers: int = 4
    target_emotions: int = 2
    n_source: int = 20000
    source_heldout_ratio: float = 0.1   # 9:1 train/heldout split
    target_train: int = 500
    target_test: int = 100
    text_len_min: int = 3
    text_len_max: int = 8
    target_text_vocab: int = 8
    with_transfer: bool = True

    def required_speakers(self):
        return self.source_speakers + self.target_speakers * (2 if self.with_transfer else 1)

    def required_emotions(self):
        return self.source_emotions + self.target_emotions * (2 if self.with_transfer else 1)

    def rosters(self):
        s0, e0 = self.source_speakers, self.source_emotions
        out = {
            "source": (list(range(s0)), list(range(e0))),
            "target": (list(range(s0, s0 + self.target_speakers)),
                       list(range(e0, e0 + self.target_emotions))),
        }
        if self.with_transfer:
            out["transfer"] = (
                list(range(s0 + self.target_speakers, s0 + 2 * self.target_speakers)),
                list(range(e0 + self.target_emotions, e0 + 2 * self.target_emotions)))
        return out


@dataclass
class CorpusManifest:
    split: str
    spec_hash: str
    count: int
    speakers: list
    emotions: list
    text_vocab: list
    path: str = ""

    def to_dict(self):
        return asdict(self)


def write_jsonl(utterances, path):
    with open(path, "w") as f:
        for u in utterances:
            f.write(json.dumps({"id": u.id, "speaker": u.speaker,
                                "emotion": u.emotion, "text": u.text,
                                "speech": u.speech}) + "\n")


def read_jsonl(path):
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(Utterance(id=d["id"], speaker=d["speaker"],
                                 emotion=d["emotion"], text=d["text"],
                                 speech=d["speech"]))
    return out


def _sample_split(spec, split, speakers, emotions, text_vocab, count, layout):
    """Deterministic utterance set: round-robin (s, e) pairs, seeded text."""
    split_id = _SPLIT_IDS[split]
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, 7, split_id]))
    pairs = [(s, e) for s in speakers for e in emotions]
    order = rng.permutation(len(pairs))
    vocab = np.asarray(text_vocab, dtype=np.int64)
    utts = []
    for i in range(count):
        s, e = pairs[order[i % len(pairs)]]
        n = int(rng.integers(layout.text_len_min, layout.text_len_max + 1))
        text = vocab[rng.integers(0, len(vocab), size=n)]
        utts.append(sample_utterance(
            spec, s, e, text, seed=[spec.seed, 5, split_id, i],
            uid=f"{split}-{i:05d}"))
    return utts


def build_corpora(spec, layout, out_dir):
    """Generate all splits plus manifests; returns {split: (manifest, utts)}.

    Invariants by construction: disjoint rosters across domains, every
    target-test (s, e) pair present in target-train, target text vocabulary
    a strict subset of the source's.
    """
    if layout.required_speakers() > spec.n_speakers:
        raise ValueError("domain spec has too few speakers for the layout")
    if layout.required_emotions() > spec.n_emotions:
        raise ValueError("domain spec has too few emotions for the layout")
    rosters = layout.rosters()
    src_speakers, src_emotions = rosters["source"]
    source_vocab = list(range(spec.v_t))
    vocab_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 9]))

    results = {}

    def emit(split, speakers, emotions, vocab, count):
        utts = _sample_split(spec, split, speakers, emotions, vocab, count, layout)
        man = CorpusManifest(split=split, spec_hash=spec.spec_hash(),
                             count=len(utts), speakers=list(speakers),
                             emotions=list(emotions),
                             text_vocab=[int(v) for v in vocab])
        results[split] = (man, utts)

    n_heldout = int(round(layout.n_source * layout.source_heldout_ratio))
    emit("pretrain", src_speakers, src_emotions, source_vocab,
         layout.n_source - n_heldout)
    emit("source-heldout", src_speakers, src_emotions, source_vocab, n_heldout)

    domains = [("target", "target-train", "target-test")]
    if layout.with_transfer:
        domains.append(("transfer", "transfer-train", "transfer-test"))
    for dom, train_split, test_split in domains:
        speakers, emotions = rosters[dom]
        sub = sorted(vocab_rng.choice(
            spec.v_t, size=layout.target_text_vocab, replace=False).tolist())
        emit(train_split, speakers, emotions, sub, layout.target_train)
        emit(test_split, speakers, emotions, sub, layout.target_test)

    import os
    os.makedirs(out_dir, exist_ok=True)
    index = {}
    for split, (man, utts) in results.items():
        path = os.path.join(out_dir, f"{split}.jsonl")
        write_jsonl(utts, path)
        man.path = path
        index[split] = man.to_dict()
    with open(os.path.join(out_dir, "corpora.json"), "w") as f:
        json.dump(index, f, sort_keys=True, indent=1)
    return results


def load_corpora(out_dir):
    with open(f"{out_dir}/corpora.json") as f:
        index = json.load(f)
    out = {}
    for split, man in index.items():
        out[split] = (CorpusManifest(**man), read_jsonl(man["path"]))
    return out

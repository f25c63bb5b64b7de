"""Deterministic synthetic emotional-speech token domain with exact oracles."""

from .domain import DomainSpec, make_domain
from .sampling import Utterance, sample_utterance, token_distribution
from .corpus import (
    CorpusLayout, CorpusManifest, build_corpora, load_corpora,
    read_jsonl, write_jsonl,
)
from .oracles import bayes_classify, oracle_transcribe, sequence_loglik

__all__ = [
    "DomainSpec", "make_domain", "Utterance", "sample_utterance",
    "token_distribution", "CorpusLayout", "CorpusManifest", "build_corpora",
    "load_corpora", "read_jsonl", "write_jsonl", "bayes_classify",
    "oracle_transcribe", "sequence_loglik",
]

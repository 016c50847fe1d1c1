"""Corpus BLEU-4, corpus slot error rate and a nearest-neighbour baseline."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .da_core import (
    DelexUtterance, DialogueAct, Ontology, Vocabulary, canonical_da, encode_da, group_references,
    lexicalise, tokenize,
)
from .decoder import DecodeConfig, rerank, slot_error_rate
from .numkit import Rng
from .sclstm_net import NetworkParams

__all__ = ["bleu4", "corpus_err", "KNNBaseline", "knn_generate", "build_references",
           "EvalReport", "evaluate_model", "evaluate_knn", "mean_report"]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]],
          smoothing: bool = False) -> float:
    """Corpus BLEU-4 with clipped counts and the closest-reference-length brevity penalty.

    Without smoothing any n-gram order with zero matches gives 0.0. With
    ``smoothing`` a zero match count is replaced by 0.1 (the epsilon method).
    """
    if not hypotheses:
        raise ValueError("bleu4 needs at least one hypothesis")
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("empty reference set")
        hyp = list(hyp)
        hyp_len += len(hyp)
        # closest reference length, shorter one on ties
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            counts = _ngrams(hyp, n)
            best: Counter = Counter()
            for r in refs:
                best |= _ngrams(list(r), n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if t == 0:
            return 0.0
        if m == 0:
            if not smoothing:
                return 0.0
            m = 0.1
        log_p += 0.25 * math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def corpus_err(realisations: Sequence[Sequence[DelexUtterance]], das: Sequence[DialogueAct]) -> float:
    """Mean slot error rate over every realisation of every DA, in percent."""
    if len(realisations) != len(das):
        raise ValueError("one list of realisations per DA expected")
    errs = [slot_error_rate(u, da) for us, da in zip(realisations, das) for u in us]
    return 100.0 * float(np.mean(errs)) if errs else 0.0


class KNNBaseline:
    """Returns the surface form of the training DA whose vector has the highest cosine."""

    def __init__(self, train: Sequence[tuple], ont: Ontology):
        if not train:
            raise ValueError("empty training corpus")
        groups: dict[str, tuple[DialogueAct, DelexUtterance]] = {}
        for item in train:
            groups.setdefault(canonical_da(item[0]), (item[0], item[1]))
        self.keys = sorted(groups)
        self.forms = [groups[k][1] for k in self.keys]
        vecs = np.array([encode_da(groups[k][0], ont) for k in self.keys])
        self.unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        self.ont = ont

    def similarities(self, da: DialogueAct) -> np.ndarray:
        v = encode_da(da, self.ont)
        return self.unit @ (v / np.linalg.norm(v))

    def generate(self, da: DialogueAct) -> DelexUtterance:
        # keys are sorted, so argmax picks the smallest canonical DA among ties
        return self.forms[int(np.argmax(self.similarities(da)))]


def knn_generate(train: Sequence[tuple], da: DialogueAct, ont: Ontology) -> DelexUtterance:
    return KNNBaseline(train, ont).generate(da)


def surface_tokens(utt: DelexUtterance, da: DialogueAct) -> list[str]:
    return tokenize(lexicalise(utt, da))


def build_references(test: Sequence[tuple], corpus: Sequence[tuple]) -> tuple[list[list[list[str]]], list[bool]]:
    """Reference token lists per test item plus a flag for items that fell back to their own gold text."""
    groups = group_references((it[0], it[1]) for it in corpus)
    refs, fallback = [], []
    for item in test:
        forms = groups.get(canonical_da(item[0]))
        if forms:
            refs.append([surface_tokens(u, item[0]) for u in forms])
            fallback.append(False)
        else:
            refs.append([tokenize(item[2]) if len(item) > 2 else surface_tokens(item[1], item[0])])
            fallback.append(True)
    return refs, fallback


@dataclass
class EvalReport:
    bleu4: float
    bleu4_top5: float
    corpus_err_percent: float
    n_das: int
    details: list[dict] = field(default_factory=list, repr=False)

    def metrics(self) -> dict:
        return {"bleu4": self.bleu4, "bleu4_top5": self.bleu4_top5,
                "err_percent": self.corpus_err_percent, "n_das": self.n_das}


def _report(outputs: list[list[DelexUtterance]], test: Sequence[tuple],
            refs: list[list[list[str]]]) -> EvalReport:
    das = [it[0] for it in test]
    top1 = [surface_tokens(us[0], da) for us, da in zip(outputs, das)]
    pooled_h, pooled_r = [], []
    for us, da, r in zip(outputs, das, refs):
        for u in us:
            pooled_h.append(surface_tokens(u, da))
            pooled_r.append(r)
    details = [{"da": canonical_da(da), "outputs": [u.text() for u in us]}
               for us, da in zip(outputs, das)]
    return EvalReport(bleu4(top1, refs), bleu4(pooled_h, pooled_r), corpus_err(outputs, das),
                      len(das), details)


def evaluate_model(fwd: NetworkParams, bwd: NetworkParams, vocab: Vocabulary, ont: Ontology,
                   test: Sequence[tuple], corpus: Sequence[tuple], cfg: DecodeConfig, rng: Rng) -> EvalReport:
    """Rerank-decode every test DA and score top-1 BLEU, pooled top-n BLEU and corpus ERR."""
    if not test:
        raise ValueError("empty test set")
    refs, _ = build_references(test, corpus)
    outputs = []
    for item in test:
        cands = rerank(fwd, bwd, vocab, encode_da(item[0], ont), item[0], cfg, rng)
        outputs.append([c.tokens for c in cands])
    return _report(outputs, test, refs)


def evaluate_knn(train: Sequence[tuple], ont: Ontology, test: Sequence[tuple],
                 corpus: Sequence[tuple]) -> EvalReport:
    if not test:
        raise ValueError("empty test set")
    refs, _ = build_references(test, corpus)
    knn = KNNBaseline(train, ont)
    return _report([[knn.generate(it[0])] for it in test], test, refs)


def mean_report(reports: Sequence[EvalReport]) -> dict:
    keys = ("bleu4", "bleu4_top5", "err_percent")
    return {k: float(np.mean([r.metrics()[k] for r in reports])) for k in keys}

"""Over-generation by sampling and reranking with forward/backward costs plus a slot-error penalty."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .da_core import EOS, DelexUtterance, DialogueAct, Vocabulary, is_slot_token, slot_token
from .numkit import Rng, sample_categorical
from .sclstm_net import (
    ETA, XI, NetworkParams, State, forward_sentence, reverse_for_reranker, sentence_cost, step,
)

__all__ = ["DecodeConfig", "Candidate", "sample_utterance", "slot_error_rate", "score_candidate",
           "overgenerate", "rerank"]


@dataclass(frozen=True)
class DecodeConfig:
    n_overgen: int = 20
    n_best: int = 5
    lam: float = 100.0
    max_len: int = 60
    eta: float = ETA
    xi: float = XI

    def __post_init__(self):
        if not 1 <= self.n_best <= self.n_overgen:
            raise ValueError("need 1 <= n_best <= n_overgen")
        if self.max_len < 1:
            raise ValueError("max_len must be positive")


@dataclass(frozen=True)
class Candidate:
    tokens: DelexUtterance
    f_cost: float
    b_cost: float
    err: float
    score: float
    truncated: bool = False

    def sort_key(self):
        return (-self.score, self.err, len(self.tokens.tokens))


def sample_utterance(fwd: NetworkParams, vocab: Vocabulary, d0: np.ndarray, rng: Rng,
                     max_len: int = 60) -> tuple[DelexUtterance, bool]:
    """Sample one utterance token by token; returns (utterance, truncated).

    ``max_len`` bounds the number of sampled tokens including EOS. If it runs
    out first the utterance is closed with EOS and flagged as truncated.
    """
    state = State.zeros(fwd.config)
    d = np.asarray(d0, dtype=np.float64)
    tok = vocab.bos
    body: list[str] = []
    for _ in range(max_len):
        state, d, p = step(fwd, tok, state, d)
        tok = sample_categorical(p, rng)
        if tok == vocab.eos:
            return DelexUtterance.from_body(body), False
        body.append(vocab.tokens[tok])
    return DelexUtterance.from_body(body), True


def slot_error_rate(candidate: DelexUtterance | Sequence[str], da: DialogueAct) -> float:
    """(missing + redundant) slot tokens over the number of categorical slots in ``da``.

    Slots bound to yes/no/dontcare or requested are not delexicalisable, so
    they do not count towards N and their tokens are redundant if produced.
    """
    body = candidate.body if isinstance(candidate, DelexUtterance) else DelexUtterance(tuple(candidate)).body
    wanted = Counter(slot_token(s) for s in da.categorical())
    seen = Counter(t for t in body if is_slot_token(t))
    missing = sum(max(0, n - seen[t]) for t, n in wanted.items())
    redundant = sum(max(0, n - wanted[t]) for t, n in seen.items())
    if not wanted:
        return float(redundant)
    return (missing + redundant) / len(wanted)


def _net_cost(net: NetworkParams, ids: np.ndarray, d0: np.ndarray, eta: float, xi: float) -> float:
    return sentence_cost(forward_sentence(net, ids[:-1], d0), ids[1:], eta, xi)[0]


def score_candidate(utt: DelexUtterance, fwd: NetworkParams, bwd: NetworkParams, vocab: Vocabulary,
                    d0: np.ndarray, da: DialogueAct, cfg: DecodeConfig = DecodeConfig(),
                    truncated: bool = False) -> Candidate:
    f_cost = _net_cost(fwd, vocab.ids(utt.tokens), d0, cfg.eta, cfg.xi)
    b_cost = _net_cost(bwd, vocab.ids(reverse_for_reranker(utt.tokens)), d0, cfg.eta, cfg.xi)
    err = slot_error_rate(utt, da)
    return Candidate(utt, f_cost, b_cost, err, -(f_cost + b_cost + cfg.lam * err), truncated)


def overgenerate(fwd: NetworkParams, bwd: NetworkParams, vocab: Vocabulary, d0: np.ndarray,
                 da: DialogueAct, cfg: DecodeConfig, rng: Rng) -> list[Candidate]:
    """All ``n_overgen`` scored samples, in sampling order."""
    cache: dict[tuple[str, ...], Candidate] = {}
    out = []
    for _ in range(cfg.n_overgen):
        utt, truncated = sample_utterance(fwd, vocab, d0, rng, cfg.max_len)
        key = utt.tokens + ((EOS,) if truncated else ())
        if key not in cache:
            cache[key] = score_candidate(utt, fwd, bwd, vocab, d0, da, cfg, truncated)
        out.append(cache[key])
    return out


def rerank(fwd: NetworkParams, bwd: NetworkParams, vocab: Vocabulary, d0: np.ndarray,
           da: DialogueAct, cfg: DecodeConfig, rng: Rng) -> list[Candidate]:
    """Top ``n_best`` of the over-generated samples, best first."""
    cands = overgenerate(fwd, bwd, vocab, d0, da, cfg, rng)
    return sorted(cands, key=Candidate.sort_key)[: cfg.n_best]

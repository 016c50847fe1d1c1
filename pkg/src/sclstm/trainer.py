"""SGD training of a forward generator and its backward reranker.

Both networks see every training sentence once per epoch, one sentence
per update, alternating forward then backward. They share the reading-gate
keyword detector ``W_wr``, so each update moves it twice.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .da_core import (
    DelexUtterance, DialogueAct, Ontology, Special, Vocabulary, canonical_da, encode_da,
    heuristic_slot_table,
)
from .numkit import make_rng
from .sclstm_net import (
    ETA, XI, NetConfig, NetworkParams, backprop_sentence, forward_sentence, init_params,
    reverse_for_reranker, sentence_cost, tie,
)

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig", "SplitCorpus", "Example", "DivergenceError", "sentence_cost",
    "split_corpus", "SPLIT_KEYS", "upsample", "encode_examples", "make_net_config", "train", "sgd_update",
]


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, index: int, cost: float):
        super().__init__(f"cost became {cost!r} at epoch {epoch}, sentence {index}")
        self.epoch = epoch
        self.index = index


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    lr_decay: float = 0.5
    eta: float = ETA
    xi: float = XI
    l2_coeff: float = 1e-5
    l2_every: int = 10
    max_epochs: int = 30
    patience: int = 5
    seed: int = 1
    upsample: bool = True
    clip: float = 5.0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.eta <= 0 or self.xi <= 0:
            raise ValueError("eta and xi must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


# (dialogue act, delexicalised utterance, surface text)
Item = tuple


@dataclass
class SplitCorpus:
    train: list[Item]
    valid: list[Item]
    test: list[Item]


SPLIT_KEYS = ("form", "da")


def _split_key(item: Item, group_by: str) -> str:
    if group_by == "form":
        return canonical_da(item[0]) + "\t" + " ".join(item[1].tokens)
    return canonical_da(item[0])


def _act_slot_kinds(da: DialogueAct) -> set[str]:
    return {f"{da.act_type}|{slot}|{v.value if isinstance(v, Special) else 'value'}"
            for slot, v in da.bindings}


def split_corpus(items: Sequence[Item], seed: int = 0, ratios: tuple[int, int, int] = (3, 1, 1),
                 ont: Ontology | None = None, group_by: str = "form") -> SplitCorpus:
    """Partition whole groups into train/valid/test, roughly by ``ratios`` of sentences.

    ``group_by="form"`` keeps every copy of an identical delexicalised
    sentence (same canonical DA, same delexicalised text) in one split, so
    a DA can have training and test realisations but no test sentence is a
    verbatim training sentence. ``group_by="da"`` holds out whole DAs.

    Groups are visited in a seeded random order and each goes to the split
    furthest below its target share, except that a group with a word not yet
    seen in training goes to training. With ``ont`` the same holds for DA
    features (act type, slot, special value) and for each (act, slot, value
    kind) pairing, so a held-out DA is a new combination of realisations
    that training has shown, never a new one.
    """
    if group_by not in SPLIT_KEYS:
        raise ValueError(f"group_by must be one of {SPLIT_KEYS}")
    groups: dict[str, list[int]] = {}
    for i, item in enumerate(items):
        groups.setdefault(_split_key(item, group_by), []).append(i)
    keys = sorted(groups)
    order = make_rng(seed).permutation(len(keys))
    total = float(sum(ratios))
    targets = [len(items) * r / total for r in ratios]
    parts: list[list[int]] = [[], [], []]
    covered: set = set()
    for k in order:
        members = groups[keys[int(k)]]
        needs = {tok for i in members for tok in items[i][1].tokens}
        if ont is not None:
            da = items[members[0]][0]
            needs |= set(np.flatnonzero(encode_da(da, ont)).tolist()) | _act_slot_kinds(da)
        if needs <= covered:
            dest = int(np.argmax([t - len(p) for t, p in zip(targets, parts)]))
        else:
            dest = 0
        parts[dest].extend(members)
        if dest == 0:
            covered |= needs
    return SplitCorpus(*[[items[i] for i in sorted(p)] for p in parts])


def upsample(items: Sequence[Item]) -> list[Item]:
    """Replicate members of small DA groups until each group reaches the median group size."""
    groups: dict[str, list[Item]] = {}
    for item in items:
        groups.setdefault(canonical_da(item[0]), []).append(item)
    if not groups:
        return []
    target = int(math.ceil(float(np.median([len(g) for g in groups.values()]))))
    out = list(items)
    for key in sorted(groups):
        members = groups[key]
        out.extend(members[i % len(members)] for i in range(max(0, target - len(members))))
    return out


@dataclass(frozen=True)
class Example:
    d0: np.ndarray
    fwd_in: np.ndarray
    fwd_out: np.ndarray
    bwd_in: np.ndarray
    bwd_out: np.ndarray


def encode_example(da: DialogueAct, utt: DelexUtterance, vocab: Vocabulary, ont: Ontology) -> Example:
    fwd = vocab.ids(utt.tokens)
    bwd = vocab.ids(reverse_for_reranker(utt.tokens))
    return Example(encode_da(da, ont), fwd[:-1], fwd[1:], bwd[:-1], bwd[1:])


def encode_examples(items: Sequence[Item], vocab: Vocabulary, ont: Ontology) -> list[Example]:
    return [encode_example(it[0], it[1], vocab, ont) for it in items]


def make_net_config(vocab: Vocabulary, ont: Ontology, **kwargs) -> NetConfig:
    return NetConfig(vocab_size=len(vocab), da_dim=ont.dimension,
                     heuristic_slots=heuristic_slot_table(vocab, ont), **kwargs)


def sgd_update(net: NetworkParams, grads: dict[str, np.ndarray], lr: float,
               clip: float | None = None, l2: float = 0.0) -> None:
    """In-place update so that blocks tied to another network move for both."""
    for name, g in grads.items():
        w = net.blocks[name]
        if l2:
            g = g + l2 * w
        if clip is not None:
            g = np.clip(g, -clip, clip)
        w -= lr * g


def corpus_cost(fwd: NetworkParams, bwd: NetworkParams | None, examples: Sequence[Example],
                eta: float = ETA, xi: float = XI) -> float:
    """Mean per-sentence cost of the (forward + backward) networks in eval mode."""
    total = 0.0
    for ex in examples:
        total += sentence_cost(forward_sentence(fwd, ex.fwd_in, ex.d0), ex.fwd_out, eta, xi)[0]
        if bwd is not None:
            total += sentence_cost(forward_sentence(bwd, ex.bwd_in, ex.d0), ex.bwd_out, eta, xi)[0]
    return total / max(len(examples), 1)


def copy_pair(fwd: NetworkParams, bwd: NetworkParams) -> tuple[NetworkParams, NetworkParams]:
    f, b = fwd.copy(), bwd.copy()
    tie(f, b)
    return f, b


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid: float = math.inf

    def log_line(self, rec: dict) -> str:
        return (f"epoch {rec['epoch']} train {rec['train_cost']:.4f} "
                f"valid {rec['valid_cost']:.4f} lr {rec['lr']:.6g}")


def train(split: SplitCorpus, vocab: Vocabulary, ont: Ontology, net_cfg: NetConfig,
          cfg: TrainConfig = TrainConfig(),
          on_epoch: Callable[[dict], None] | None = None) -> tuple[NetworkParams, NetworkParams, History]:
    """Train forward and backward networks; return the best-validation pair."""
    if not split.train or not split.valid:
        raise ValueError("need non-empty train and valid splits")
    rng = make_rng(cfg.seed)
    fwd = init_params(net_cfg, rng, cfg.init_scale)
    bwd = init_params(net_cfg, rng, cfg.init_scale)
    tie(fwd, bwd)

    train_items = upsample(split.train) if cfg.upsample else list(split.train)
    train_ex = encode_examples(train_items, vocab, ont)
    valid_ex = encode_examples(split.valid, vocab, ont)

    history = History()
    best = copy_pair(fwd, bwd)
    lr = cfg.learning_rate
    stalls = 0
    for epoch in range(1, cfg.max_epochs + 1):
        total = 0.0
        for k, idx in enumerate(rng.permutation(len(train_ex))):
            ex = train_ex[int(idx)]
            l2 = cfg.l2_coeff if (k + 1) % cfg.l2_every == 0 else 0.0
            for net, x, y in ((fwd, ex.fwd_in, ex.fwd_out), (bwd, ex.bwd_in, ex.bwd_out)):
                trace = forward_sentence(net, x, ex.d0, rng, train=True)
                grads, cost = backprop_sentence(net, trace, y, cfg.eta, cfg.xi)
                if not math.isfinite(cost):
                    raise DivergenceError(epoch, k, cost)
                sgd_update(net, grads, lr, cfg.clip, l2)
                total += cost
        valid = corpus_cost(fwd, bwd, valid_ex, cfg.eta, cfg.xi)
        if not math.isfinite(valid):
            raise DivergenceError(epoch, len(train_ex), valid)
        rec = {"epoch": epoch, "train_cost": total / len(train_ex), "valid_cost": valid, "lr": lr}
        history.epochs.append(rec)
        log.info(history.log_line(rec))
        if on_epoch is not None:
            on_epoch(rec)
        if valid < history.best_valid:
            history.best_valid = valid
            history.best_epoch = epoch
            best = copy_pair(fwd, bwd)
            stalls = 0
        else:
            stalls += 1
            if stalls > cfg.patience:
                break
            lr *= cfg.lr_decay
    return best[0], best[1], history

from types import SimpleNamespace

import pytest

from sclstm.corpusgen import preset_templates, preset_values, synth_corpus
from sclstm.da_core import Vocabulary, delexicalise, parse_da, preset_ontology
from sclstm.numkit import make_rng
from sclstm.trainer import TrainConfig, make_net_config, split_corpus, train


def synth_items(domain="restaurant", n=200, seed=1):
    ont = preset_ontology(domain)
    recs = synth_corpus(ont, preset_templates(domain), preset_values(domain), n, make_rng(seed))
    items = []
    for r in recs:
        da = parse_da(r["da"], ont)
        items.append((da, delexicalise(r["text"], da, ont), r["text"]))
    return ont, recs, items


@pytest.fixture(scope="session")
def toy():
    """A small corpus and a briefly trained model pair."""
    ont, recs, items = synth_items(n=200, seed=3)
    split = split_corpus(items, seed=0, ont=ont)
    vocab = Vocabulary.build([it[1] for it in split.train], ont)
    cfg = make_net_config(vocab, ont, hidden_size=16)
    fwd, bwd, history = train(split, vocab, ont, cfg, TrainConfig(max_epochs=3, seed=1))
    return SimpleNamespace(ont=ont, recs=recs, items=items, split=split, vocab=vocab,
                           fwd=fwd, bwd=bwd, history=history)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

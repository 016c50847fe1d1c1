"""Synthetic DA/utterance corpora built from an ontology and surface templates.

A template set has *frames* (one sentence skeleton per act type, with
``{slot}`` placeholders and a ``{rest}`` hole) and per-slot *phrases* in three
styles: ``vp`` (verb phrases about a named venue), ``pp`` (constraint phrases)
and ``ask`` (questions for requested slots). ``(a|b)`` groups pick one
alternative at random; groups may nest.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .da_core import (
    DialogueAct, Ontology, Special, canonical_da, lexicalise, render_da, slot_token,
)
from .numkit import Rng

_PLACEHOLDER = re.compile(r"\{([a-z_\-]+)\}")
_GROUP = re.compile(r"\(([^()]*)\)")


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    id: str
    act: str
    requires: tuple[str, ...]
    rest: str
    text: str

    def placeholders(self) -> list[str]:
        return [p for p in _PLACEHOLDER.findall(self.text) if p != "rest"]


@dataclass(frozen=True)
class TemplateSet:
    domain: str
    frames: tuple[Frame, ...]
    phrases: dict
    joiners: tuple[str, ...]
    synonyms: dict

    @classmethod
    def from_dict(cls, data: dict) -> "TemplateSet":
        frames = tuple(
            Frame(f["id"], f["act"], tuple(f.get("requires", ())), f.get("rest", "none"), f["text"])
            for f in data["frames"])
        return cls(data.get("domain", ""), frames, data["phrases"],
                   tuple(data.get("joiners", [" and "])), dict(data.get("synonyms", {})))

    def slots_with(self, style: str) -> list[str]:
        return list(self.phrases.get(style, {}))

    def validate(self, ont: Ontology) -> None:
        known = {s.name for s in ont.slots}
        for f in self.frames:
            if f.act not in ont.act_types:
                raise TemplateError(f"template {f.id}: unknown act type {f.act!r}")
            for p in f.placeholders() + list(f.requires):
                if p not in known:
                    raise TemplateError(f"template {f.id}: unknown slot {p!r}")
            if f.rest not in ("none", "vp", "pp", "ask"):
                raise TemplateError(f"template {f.id}: unknown rest style {f.rest!r}")
        for style, table in self.phrases.items():
            for slot, kinds in table.items():
                if slot not in known:
                    raise TemplateError(f"{style} phrases: unknown slot {slot!r}")
                entries = kinds if isinstance(kinds, list) else [t for v in kinds.values() for t in v]
                for text in entries:
                    for p in _PLACEHOLDER.findall(text):
                        if p != slot:
                            raise TemplateError(f"{style} phrase for {slot!r} mentions {p!r}")


def load_templates(path: str | Path) -> TemplateSet:
    with open(path, encoding="utf-8") as fh:
        return TemplateSet.from_dict(json.load(fh))


def _data_file(name: str):
    ref = resources.files("sclstm") / "data" / name
    if not ref.is_file():
        raise FileNotFoundError(name)
    return json.loads(ref.read_text(encoding="utf-8"))


def preset_templates(domain: str) -> TemplateSet:
    return TemplateSet.from_dict(_data_file(f"{domain}.templates.json"))


def preset_values(domain: str) -> dict[str, list[str]]:
    return _data_file(f"{domain}.values.json")


def load_values(path: str | Path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def expand_alternations(text: str, rng: Rng) -> str:
    """Resolve ``(a|b)`` groups, innermost first."""
    while True:
        m = _GROUP.search(text)
        if m is None:
            return " ".join(text.split())
        options = m.group(1).split("|")
        text = text[: m.start()] + options[int(rng.integers(len(options)))] + text[m.end():]


# ----------------------------------------------------------------------
# DA sampling
# ----------------------------------------------------------------------
ACT_WEIGHTS = {
    "inform": 0.44, "inform_only": 0.12, "reject": 0.10, "confirm": 0.08,
    "select": 0.05, "request": 0.09, "reqmore": 0.06, "goodbye": 0.06,
}
# number of constraint slots next to the venue name in an inform, indexed from 0
INFORM_EXTRA = (0.04, 0.21, 0.40, 0.35)
# slots describing how to reach or pay for a venue rather than what it is
CONTACT_SLOTS = ("phone", "address", "postcode", "price")


def _pick(rng: Rng, items, k: int = 1) -> list:
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[int(i)] for i in idx]


def _value(slot: str, ont: Ontology, values: dict, rng: Rng, dontcare_p: float):
    sdef = ont.slot(slot)
    if sdef.allows_dontcare and rng.random() < dontcare_p:
        return Special.DONTCARE
    if sdef.is_binary:
        return Special.YES if rng.random() < 0.5 else Special.NO
    pool = values[slot]
    return pool[int(rng.integers(len(pool)))]


def sample_da(ont: Ontology, templates: TemplateSet, values: dict, rng: Rng) -> DialogueAct:
    acts = [a for a in ACT_WEIGHTS if any(f.act == a for f in templates.frames)]
    weights = [ACT_WEIGHTS[a] for a in acts]
    total = sum(weights)
    act = acts[int(rng.choice(len(acts), p=[w / total for w in weights]))]
    constraints = [s for s in templates.slots_with("pp") if s != "type"]
    contact = [s for s in templates.slots_with("vp") if s in CONTACT_SLOTS]
    bindings: list[tuple[str, object]] = []

    def bind(slots, dontcare_p=0.0):
        for s in slots:
            bindings.append((s, _value(s, ont, values, rng, dontcare_p)))

    if act == "inform":
        u = rng.random()
        if u < 0.12:
            bind(["count", "type"])
            bind(_pick(rng, constraints, int(rng.integers(0, 2))), dontcare_p=0.3)
        elif u < 0.35 and contact:
            bind(["name"])
            bind(_pick(rng, contact, 2 if rng.random() < 0.6 else 1))
        else:
            bind(["name"])
            k = int(rng.choice(len(INFORM_EXTRA), p=INFORM_EXTRA))
            bind(_pick(rng, constraints, k))
    elif act == "inform_only":
        bind(["name"])
        bind(_pick(rng, constraints, 2 if rng.random() < 0.6 else 1))
    elif act == "reject":
        bind(_pick(rng, constraints, int(rng.integers(1, 3))), dontcare_p=0.15)
    elif act == "confirm":
        bind(_pick(rng, constraints, int(rng.integers(1, 3))), dontcare_p=0.2)
    elif act == "select":
        bind(_pick(rng, constraints, 1))
    elif act == "request":
        for s in _pick(rng, templates.slots_with("ask"), 1):
            bindings.append((s, Special.REQUESTED))
    return DialogueAct(act, tuple(bindings))


# ----------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------
def _fill(text: str, da: DialogueAct, where: str) -> str:
    bound = da.categorical()

    def sub(m):
        slot = m.group(1)
        if slot == "rest":
            return m.group(0)
        if slot not in bound:
            raise TemplateError(f"template {where} references unbound slot {slot!r}")
        return slot_token(slot)

    return _PLACEHOLDER.sub(sub, text)


def _phrase(templates: TemplateSet, style: str, slot: str, value, rng: Rng) -> str:
    table = templates.phrases.get(style, {}).get(slot)
    if table is None:
        raise TemplateError(f"no {style} phrase for slot {slot!r}")
    if isinstance(table, list):
        options = table
    else:
        kind = value.value if isinstance(value, Special) else "value"
        options = table.get(kind)
        if not options:
            raise TemplateError(f"no {style} phrase for {slot}={kind}")
    return options[int(rng.integers(len(options)))]


def render_delex(da: DialogueAct, templates: TemplateSet, rng: Rng) -> str:
    """Surface form of ``da`` with slot tokens in place of categorical values."""
    bound = {s for s, v in da.bindings if isinstance(v, str)}
    frames = []
    for f in templates.frames:
        if f.act != da.act_type or not set(f.requires) <= bound:
            continue
        leftover = [s for s in da.slots if s not in f.requires]
        if (f.rest == "none") == (not leftover):
            frames.append(f)
    if not frames:
        raise TemplateError(f"no template covers {canonical_da(da)}")
    frame = frames[int(rng.integers(len(frames)))]
    leftover = [s for s in da.slots if s not in frame.requires]
    order = [leftover[int(i)] for i in rng.permutation(len(leftover))]
    parts = [_fill(_phrase(templates, frame.rest, s, da.get(s), rng), da, f"{frame.rest}:{s}")
             for s in order]
    joiner = templates.joiners[int(rng.integers(len(templates.joiners)))]
    text = _fill(frame.text, da, frame.id).replace("{rest}", joiner.join(parts))
    return expand_alternations(text, rng)


def _perturb(delex: str, synonyms: dict, rng: Rng) -> str:
    tokens = delex.split()
    spots = [i for i, t in enumerate(tokens) if t in synonyms]
    if spots:
        i = spots[int(rng.integers(len(spots)))]
        tokens[i] = synonyms[tokens[i]]
    return " ".join(tokens)


def synth_corpus(ont: Ontology, templates: TemplateSet, values: dict, n_sentences: int,
                 rng: Rng, noise_rate: float = 0.0) -> list[dict]:
    """Sample ``n_sentences`` DAs and realise each with a random template.

    Returns corpus records ``{"da": ..., "text": ...}``. With probability
    ``noise_rate`` a sentence gets one synonym swap outside the slot values.
    """
    if n_sentences <= 0:
        raise ValueError("n_sentences must be positive")
    templates.validate(ont)
    records = []
    for _ in range(n_sentences):
        da = sample_da(ont, templates, values, rng)
        delex = render_delex(da, templates, rng)
        if noise_rate > 0 and rng.random() < noise_rate:
            delex = _perturb(delex, templates.synonyms, rng)
        records.append({"da": render_da(da), "text": lexicalise(delex.split(), da)})
    return records


def corpus_stats(das: list[DialogueAct]) -> dict:
    groups = Counter(canonical_da(d) for d in das)
    return {
        "sentences": len(das),
        "distinct_das": len(groups),
        "mean_slots_per_da": sum(len(d.bindings) for d in das) / max(len(das), 1),
        "act_counts": dict(sorted(Counter(d.act_type for d in das).items())),
    }

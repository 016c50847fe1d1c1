"""Dialogue acts: ontology, parsing, vector encoding and (de)lexicalisation.

A dialogue act string looks like::

    inform(name="red door cafe",kidsallowed=no,area=dontcare)

Slots without a value (``request(area)``) are requested slots. Values are
quoted strings, or the bare words ``yes``, ``no`` and ``dontcare``.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

BOS = "BOS"
EOS = "EOS"
SLOT_PREFIX = "SLOT_"

FEATURES = ("mentioned", "dontcare", "yes", "no", "requested")
REQUEST_ACTS = frozenset({"request", "select"})


class Special(enum.Enum):
    DONTCARE = "dontcare"
    YES = "yes"
    NO = "no"
    REQUESTED = "requested"


# a categorical value is a plain string
SlotValue = Union[str, Special]


class DAParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


@dataclass(frozen=True)
class SlotDef:
    name: str
    kind: str = "categorical"
    allows_dontcare: bool = False

    def __post_init__(self):
        if self.kind not in ("categorical", "binary"):
            raise ValueError(f"unknown slot kind {self.kind!r}")

    @property
    def is_binary(self) -> bool:
        return self.kind == "binary"


def _norm(name: str) -> str:
    return name.lower().replace("-", "").replace("_", "")


def slot_token(slot: str) -> str:
    return SLOT_PREFIX + slot.upper().replace("-", "_")


def is_slot_token(token: str) -> bool:
    return token.startswith(SLOT_PREFIX)


@dataclass(frozen=True)
class Ontology:
    domain_name: str
    act_types: tuple[str, ...]
    slots: tuple[SlotDef, ...]
    aliases: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if len(set(self.act_types)) != len(self.act_types):
            raise ValueError("duplicate act type")
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise ValueError("duplicate slot name")
        lookup: dict[str, str] = {}
        for name in list(self.act_types) + names:
            lookup[_norm(name)] = name
        for alias, target in self.aliases:
            lookup[_norm(alias)] = target
        object.__setattr__(self, "_lookup", lookup)
        object.__setattr__(self, "_slot_pos", {s.name: i for i, s in enumerate(self.slots)})
        object.__setattr__(self, "_token_slot", {slot_token(s.name): s.name for s in self.slots})

    # -- name resolution -------------------------------------------------
    def resolve_act(self, name: str) -> str | None:
        found = self._lookup.get(_norm(name))
        return found if found in self.act_types else None

    def resolve_slot(self, name: str) -> str | None:
        found = self._lookup.get(_norm(name))
        return found if found in self._slot_pos else None

    def slot(self, name: str) -> SlotDef:
        return self.slots[self._slot_pos[name]]

    def slot_for_token(self, token: str) -> str | None:
        return self._token_slot.get(token)

    # -- vector layout ---------------------------------------------------
    @property
    def dimension(self) -> int:
        return len(self.act_types) + len(FEATURES) * len(self.slots)

    def act_index(self, act: str) -> int:
        return self.act_types.index(act)

    def feature_index(self, slot: str, feature: str) -> int:
        return (len(self.act_types) + len(FEATURES) * self._slot_pos[slot]
                + FEATURES.index(feature))

    def feature_names(self) -> list[str]:
        names = [f"act={a}" for a in self.act_types]
        names += [f"{s.name}.{f}" for s in self.slots for f in FEATURES]
        return names

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "domain_name": self.domain_name,
            "act_types": list(self.act_types),
            "slots": [{"name": s.name, "kind": s.kind, "allows_dontcare": s.allows_dontcare}
                      for s in self.slots],
            "aliases": dict(self.aliases),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Ontology":
        return cls(
            domain_name=data["domain_name"],
            act_types=tuple(data["act_types"]),
            slots=tuple(SlotDef(**s) for s in data["slots"]),
            aliases=tuple(sorted(data.get("aliases", {}).items())),
        )


def load_ontology(path: str | Path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        return Ontology.from_dict(json.load(fh))


def preset_ontology(domain: str) -> Ontology:
    """The restaurant or hotel ontology shipped with the package."""
    ref = resources.files("sclstm") / "data" / f"{domain}.ontology.json"
    if not ref.is_file():
        raise ValueError(f"no preset ontology for domain {domain!r}")
    return Ontology.from_dict(json.loads(ref.read_text(encoding="utf-8")))


@dataclass(frozen=True)
class DialogueAct:
    act_type: str
    bindings: tuple[tuple[str, SlotValue], ...] = ()

    @property
    def slots(self) -> list[str]:
        return [s for s, _ in self.bindings]

    def get(self, slot: str) -> SlotValue | None:
        for s, v in self.bindings:
            if s == slot:
                return v
        return None

    def categorical(self) -> dict[str, str]:
        """Slots bound to a delexicalisable (categorical) value."""
        return {s: v for s, v in self.bindings if isinstance(v, str)}

    def __str__(self) -> str:
        return render_da(self)


# ----------------------------------------------------------------------
# DA string grammar
# ----------------------------------------------------------------------
_NAME = re.compile(r"[A-Za-z0-9_\-]+")
_WS = re.compile(r"\s*")


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def offset(self) -> int:
        return len(self.text[: self.pos].encode("utf-8"))

    def fail(self, message: str):
        raise DAParseError(message, self.offset())

    def skip_ws(self):
        self.pos = _WS.match(self.text, self.pos).end()

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos: self.pos + 1]

    def expect(self, ch: str):
        if self.peek() != ch:
            self.fail(f"expected {ch!r}")
        self.pos += 1

    def name(self, what: str) -> str:
        self.skip_ws()
        m = _NAME.match(self.text, self.pos)
        if not m:
            self.fail(f"expected {what}")
        self.pos = m.end()
        return m.group(0)

    def value(self) -> tuple[str, bool]:
        """Return (raw value, was_quoted)."""
        ch = self.peek()
        if ch in ("'", '"'):
            end = self.text.find(ch, self.pos + 1)
            if end < 0:
                self.fail("unterminated string")
            raw = self.text[self.pos + 1: end]
            self.pos = end + 1
            return raw, True
        return self.name("value"), False


def parse_da(text: str, ont: Ontology) -> DialogueAct:
    sc = _Scanner(text)
    start = sc.pos
    act_raw = sc.name("act type")
    act = ont.resolve_act(act_raw)
    if act is None:
        sc.pos = start
        sc.skip_ws()
        sc.fail(f"unknown act type {act_raw!r}")
    sc.expect("(")
    bindings: list[tuple[str, SlotValue]] = []
    seen: set[str] = set()
    if sc.peek() != ")":
        while True:
            sc.skip_ws()
            slot_start = sc.pos
            slot_raw = sc.name("slot name")
            slot = ont.resolve_slot(slot_raw)
            if slot is None:
                sc.pos = slot_start
                sc.fail(f"unknown slot {slot_raw!r}")
            sdef = ont.slot(slot)
            if sc.peek() == "=":
                sc.pos += 1
                sc.skip_ws()
                value_start = sc.pos
                raw, _quoted = sc.value()
                value = _classify_value(raw, sdef)
                if value is None:
                    sc.pos = value_start
                    sc.fail(f"invalid value {raw!r} for slot {slot!r}")
            else:
                if act not in REQUEST_ACTS:
                    sc.fail(f"requested slot {slot!r} under act {act!r}")
                value = Special.REQUESTED
            if slot not in seen:
                seen.add(slot)
                bindings.append((slot, value))
            ch = sc.peek()
            if ch == ",":
                sc.pos += 1
                continue
            if ch == ")":
                break
            sc.fail("expected ',' or ')'")
    sc.expect(")")
    if sc.peek():
        sc.fail("trailing characters")
    return DialogueAct(act, tuple(bindings))


def _classify_value(raw: str, sdef: SlotDef) -> SlotValue | None:
    word = " ".join(raw.lower().split())
    if word in ("dontcare", "dont care", "don't care"):
        return Special.DONTCARE if sdef.allows_dontcare else None
    if sdef.is_binary:
        return {"yes": Special.YES, "no": Special.NO}.get(word)
    if not word:
        return None
    return word


def render_da(da: DialogueAct) -> str:
    parts = []
    for slot, value in da.bindings:
        if value is Special.REQUESTED:
            parts.append(slot)
        elif isinstance(value, Special):
            parts.append(f"{slot}={value.value}")
        else:
            parts.append(f'{slot}="{value}"')
    return f"{da.act_type}({','.join(parts)})"


def canonical_da(da: DialogueAct) -> str:
    """Act type, sorted slot names and special-value markers; categorical values erased."""
    parts = []
    for slot, value in sorted(da.bindings, key=lambda b: b[0]):
        if isinstance(value, Special) and value is not Special.REQUESTED:
            parts.append(f"{slot}={value.value}")
        elif value is Special.REQUESTED:
            parts.append(f"{slot}=?")
        else:
            parts.append(slot)
    return f"{da.act_type}({','.join(parts)})"


def encode_da(da: DialogueAct, ont: Ontology) -> np.ndarray:
    d = np.zeros(ont.dimension)
    d[ont.act_index(da.act_type)] = 1.0
    for slot, value in da.bindings:
        d[ont.feature_index(slot, "mentioned")] = 1.0
        if isinstance(value, Special):
            d[ont.feature_index(slot, value.value)] = 1.0
    return d


# ----------------------------------------------------------------------
# tokenisation and (de)lexicalisation
# ----------------------------------------------------------------------
_TRAILING = ".,?!;:"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, split off trailing punctuation."""
    out: list[str] = []
    for raw in text.lower().split():
        tail: list[str] = []
        while len(raw) > 1 and raw[-1] in _TRAILING:
            tail.append(raw[-1])
            raw = raw[:-1]
        out.append(raw)
        out.extend(reversed(tail))
    return out


@dataclass(frozen=True)
class DelexUtterance:
    tokens: tuple[str, ...]
    unmatched: tuple[str, ...] = field(default=(), compare=False)

    @classmethod
    def from_body(cls, body: Iterable[str]) -> "DelexUtterance":
        return cls((BOS, *body, EOS))

    @property
    def body(self) -> tuple[str, ...]:
        toks = self.tokens
        start = 1 if toks and toks[0] == BOS else 0
        end = len(toks) - 1 if len(toks) > start and toks[-1] == EOS else len(toks)
        return toks[start:end]

    def text(self) -> str:
        return " ".join(self.body)


def delexicalise(text: str, da: DialogueAct, ont: Ontology | None = None) -> DelexUtterance:
    """Replace categorical slot values in ``text`` by their slot tokens.

    Longer values are matched first so a value containing another value (or
    a connective such as "and") is replaced as a whole.
    """
    tokens = tokenize(text)
    values = sorted(
        ((tuple(tokenize(v)), slot) for slot, v in da.categorical().items()),
        key=lambda item: (-len(item[0]), item[1]),
    )
    unmatched = []
    for value_toks, slot in values:
        if not value_toks:
            continue
        n = len(value_toks)
        out: list[str] = []
        i = 0
        found = False
        while i < len(tokens):
            if tuple(tokens[i: i + n]) == value_toks:
                out.append(slot_token(slot))
                i += n
                found = True
            else:
                out.append(tokens[i])
                i += 1
        tokens = out
        if not found:
            unmatched.append(slot)
    return DelexUtterance((BOS, *tokens, EOS), tuple(sorted(unmatched)))


def _token_values(da: DialogueAct) -> dict[str, str]:
    return {slot_token(s): v for s, v in da.categorical().items()}


def lexicalise(u: DelexUtterance | Sequence[str], da: DialogueAct) -> str:
    """Fill slot tokens with the DA's values; unbound slot tokens are kept verbatim."""
    body = u.body if isinstance(u, DelexUtterance) else DelexUtterance(tuple(u)).body
    values = _token_values(da)
    return " ".join(values.get(tok, tok) for tok in body)


def unbound_slot_tokens(u: DelexUtterance | Sequence[str], da: DialogueAct) -> list[str]:
    """Slot tokens in ``u`` that ``da`` cannot fill (redundant-slot errors)."""
    body = u.body if isinstance(u, DelexUtterance) else DelexUtterance(tuple(u)).body
    values = _token_values(da)
    return [t for t in body if is_slot_token(t) and t not in values]


def group_references(
    corpus: Iterable[tuple[DialogueAct, DelexUtterance]],
) -> dict[str, list[DelexUtterance]]:
    groups: dict[str, list[DelexUtterance]] = {}
    for da, utt in corpus:
        forms = groups.setdefault(canonical_da(da), [])
        if utt not in forms:
            forms.append(utt)
    return groups


# ----------------------------------------------------------------------
# corpus files
# ----------------------------------------------------------------------
def read_corpus(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "da" not in rec or "text" not in rec:
                raise ValueError(f"{path}:{lineno}: record needs 'da' and 'text'")
            records.append(rec)
    return records


def write_corpus(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps({"da": rec["da"], "text": rec["text"]}, ensure_ascii=False))
            fh.write("\n")


def load_corpus(path: str | Path, ont: Ontology) -> list[tuple[DialogueAct, DelexUtterance, str]]:
    """Parse and delexicalise a corpus file into (DA, delexicalised form, surface text)."""
    out = []
    for rec in read_corpus(path):
        da = parse_da(rec["da"], ont)
        out.append((da, delexicalise(rec["text"], da, ont), rec["text"]))
    return out


# ----------------------------------------------------------------------
# vocabulary
# ----------------------------------------------------------------------
UNK = "<unk>"


class Vocabulary:
    """Token <-> index map. BOS, EOS and UNK come first, then ontology slot tokens."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entry")
        for special in (BOS, EOS, UNK):
            if special not in self.index:
                raise ValueError(f"vocabulary lacks {special}")

    @classmethod
    def build(cls, utterances: Iterable[DelexUtterance], ont: Ontology | None = None) -> "Vocabulary":
        head = [BOS, EOS, UNK]
        if ont is not None:
            head += [slot_token(s.name) for s in ont.slots]
        seen = set(head)
        rest = sorted({t for u in utterances for t in u.tokens} - seen)
        return cls(head + rest)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def bos(self) -> int:
        return self.index[BOS]

    @property
    def eos(self) -> int:
        return self.index[EOS]

    def ids(self, tokens: Iterable[str]) -> np.ndarray:
        unk = self.index[UNK]
        return np.array([self.index.get(t, unk) for t in tokens], dtype=np.int64)

    def words(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


def heuristic_slot_table(vocab: Vocabulary, ont: Ontology) -> tuple:
    """(slot-token index, mentioned feature, special features) per ontology slot."""
    table = []
    for s in ont.slots:
        tok = slot_token(s.name)
        if tok in vocab:
            specials = tuple(ont.feature_index(s.name, f) for f in FEATURES[1:])
            table.append((vocab.index[tok], ont.feature_index(s.name, "mentioned"), specials))
    return tuple(table)

"""Synthetic review corpus with construction-known rewrites, plus the masked-sample pipeline.

Sentences come from templates whose only style-bearing slots are adjective
markers (one adjective pair per noun category) and an optional intensifier
that exists in one style only.  A sentence is first drawn as a style-free
*frame*; realising that frame in every style yields the gold references.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .model import MASK, PAD, Vocab
from .objectives import insert_label


def _load_skip_words():
    text = resources.files("rlm").joinpath("data/skip_words.txt").read_text("utf-8")
    return frozenset(
        line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


SKIP_WORDS = _load_skip_words()

DEFAULT_GRAMMAR = {
    "styles": ["pos", "neg"],
    "categories": {
        "food": {"nouns": ["food", "pizza", "pasta", "burger"], "adj": {"pos": "great", "neg": "bad"}},
        "service": {"nouns": ["service", "staff", "waiter", "host"], "adj": {"pos": "friendly", "neg": "rude"}},
        "price": {"nouns": ["price", "bill", "menu"], "adj": {"pos": "reasonable", "neg": "expensive"}},
        "room": {"nouns": ["room", "patio", "bathroom", "table"], "adj": {"pos": "clean", "neg": "dirty"}},
        "music": {"nouns": ["music", "atmosphere", "decor"], "adj": {"pos": "lovely", "neg": "awful"}},
        "wait": {"nouns": ["wait", "line", "delivery"], "adj": {"pos": "quick", "neg": "slow"}},
        "drink": {"nouns": ["coffee", "beer", "wine", "tea"], "adj": {"pos": "fresh", "neg": "stale"}},
        "dessert": {"nouns": ["cake", "pie", "dessert", "cookie"], "adj": {"pos": "delicious", "neg": "bland"}},
        "seat": {"nouns": ["chair", "booth", "seat"], "adj": {"pos": "comfortable", "neg": "uncomfortable"}},
        "portion": {"nouns": ["portion", "serving", "salad"], "adj": {"pos": "generous", "neg": "tiny"}},
    },
    "intensifiers": {"pos": ["really"], "neg": []},
    "intensifier_prob": 0.3,
    "templates": [
        "{pre} the {n1} was {a1} {post} .",
        "{pre} the {n1} was {a1} and the {n2} was {a2} .",
        "i think the {n1} here is {a1} {post} .",
        "we ordered the {n1} and it was {a1} {post} .",
        "my friend said the {n1} at this place was {a1} {post} .",
        "{pre} we thought the {n1} was {a1} but the {n2} was {a2} .",
        "when we came back the {n1} was still {a1} {post} .",
    ],
    "pre": ["", "", "honestly ,", "overall ,", "yesterday", "last night", "as always ,"],
    "post": ["", "", "today", "again", "as usual", "at {num} pm", "for {num} dollars", "this time"],
    "numbers": [str(n) for n in range(1, 13)],
}


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class StyleLexicon:
    style: str
    markers: tuple
    intensifiers: tuple = ()

    @property
    def words(self):
        return frozenset(self.markers) | frozenset(self.intensifiers)


@dataclass
class ParallelPair:
    source: list
    style: str
    refs: dict = field(default_factory=dict)

    def to_record(self):
        return {"tokens": self.source, "style": self.style, "refs": self.refs}


@dataclass
class Corpus:
    styles: list
    lexicons: dict
    train: list  # (tokens, style) pairs, no references
    eval: list  # ParallelPair
    vocab_words: list

    def vocab(self):
        return Vocab(self.vocab_words)

    def style_id(self, style):
        return self.styles.index(style)


@dataclass
class MaskedSample:
    """One masked training sentence.

    tokens: prediction-form input (X_{0:i}, [MASK], X_{i+1:n}); recon_tokens:
    reconstruction-form input (x_i, X_{0:i}, [MASK], X_{i+1:n}), or None for a
    null sample whose [MASK] was inserted rather than substituted (target [PAD]).
    """

    tokens: list
    recon_tokens: list | None
    target: int
    style: int
    position: int
    source: list


@dataclass
class GapSample:
    tokens: list
    k: int
    label: int
    style: int


# generation -----------------------------------------------------------------------


def _lexicons(grammar):
    lex = {}
    for style in grammar["styles"]:
        markers = tuple(cat["adj"][style] for cat in grammar["categories"].values())
        lex[style] = StyleLexicon(style, markers, tuple(grammar["intensifiers"].get(style, ())))
    return lex


def _validate(grammar):
    styles = grammar.get("styles") or []
    if len(styles) < 2:
        raise GrammarError("grammar needs at least two styles")
    cats = grammar.get("categories") or {}
    if not cats:
        raise GrammarError("empty lexicon: no categories")
    for name, cat in cats.items():
        if not cat.get("nouns"):
            raise GrammarError(f"category {name!r} has no nouns")
        missing = [s for s in styles if not cat.get("adj", {}).get(s)]
        if missing:
            raise GrammarError(f"category {name!r} lacks adjectives for {missing}")
    lex = _lexicons(grammar)
    for a, b in itertools.combinations(styles, 2):
        shared = lex[a].words & lex[b].words
        if shared:
            raise GrammarError(f"styles {a!r} and {b!r} share marker words {sorted(shared)}")
    if not grammar.get("templates"):
        raise GrammarError("grammar has no templates")


def _draw_frame(grammar, rng):
    tmpl = grammar["templates"][rng.integers(len(grammar["templates"]))]
    n_slots = 2 if "{n2}" in tmpl else 1
    cats = list(grammar["categories"])
    chosen = rng.choice(len(cats), size=n_slots, replace=False)
    slots = []
    for c in chosen:
        cat = grammar["categories"][cats[c]]
        noun = cat["nouns"][rng.integers(len(cat["nouns"]))]
        slots.append({"cat": cats[c], "noun": noun, "intense": bool(rng.random() < grammar["intensifier_prob"])})
    pre = grammar["pre"][rng.integers(len(grammar["pre"]))]
    post = grammar["post"][rng.integers(len(grammar["post"]))]
    num = grammar["numbers"][rng.integers(len(grammar["numbers"]))]
    return {"template": tmpl, "slots": slots, "pre": pre, "post": post.replace("{num}", num)}


def _realise(grammar, frame, style, intense_flags):
    adj_words = []
    for slot, flag in zip(frame["slots"], intense_flags):
        words = []
        if flag:
            words.append(flag)
        words.append(grammar["categories"][slot["cat"]]["adj"][style])
        adj_words.append(" ".join(words))
    text = frame["template"].format(
        pre=frame["pre"], post=frame["post"],
        n1=frame["slots"][0]["noun"], a1=adj_words[0],
        n2=frame["slots"][-1]["noun"], a2=adj_words[-1],
    )
    return text.split()


def _source_flags(grammar, frame, style):
    ints = grammar["intensifiers"].get(style) or []
    return [ints[0] if (slot["intense"] and ints) else None for slot in frame["slots"]]


def _reference_variants(grammar, frame, style):
    """Every realisation of ``frame`` in ``style``: each slot with or without an intensifier."""
    options = [None] + list(grammar["intensifiers"].get(style) or [])
    seen, out = set(), []
    for flags in itertools.product(options, repeat=len(frame["slots"])):
        toks = _realise(grammar, frame, style, flags)
        key = tuple(toks)
        if key not in seen:
            seen.add(key)
            out.append(toks)
    return out


def generate_corpus(grammar=None, n_train=4000, n_eval=200, seed=0, max_len=32):
    """Train split of (tokens, style) and an eval split of ParallelPairs.

    Styles alternate so both splits are balanced.  Deterministic in ``seed``.
    """
    grammar = DEFAULT_GRAMMAR if grammar is None else grammar
    _validate(grammar)
    rng = np.random.default_rng(seed)
    styles = list(grammar["styles"])

    def sentence(style):
        frame = _draw_frame(grammar, rng)
        return frame, _realise(grammar, frame, style, _source_flags(grammar, frame, style))

    train = []
    for j in range(n_train):
        style = styles[j % len(styles)]
        _, toks = sentence(style)
        train.append((toks, style))
    pairs = []
    for j in range(n_eval):
        style = styles[j % len(styles)]
        frame, toks = sentence(style)
        refs = {t: _reference_variants(grammar, frame, t) for t in styles if t != style}
        pairs.append(ParallelPair(toks, style, refs))
    longest = max(len(t) for t, _ in train + [(p.source, p.style) for p in pairs])
    if longest > max_len - 4:
        raise GrammarError(f"sentence of {longest} tokens exceeds max_len - 4 = {max_len - 4}")
    words = set()
    for toks, _ in train:
        words.update(toks)
    for p in pairs:
        words.update(p.source)
        for variants in p.refs.values():
            for r in variants:
                words.update(r)
    vocab_words = sorted(words)
    if len(vocab_words) + 4 > 512:
        raise GrammarError("vocabulary exceeds 512 tokens")
    return Corpus(styles, _lexicons(grammar), train, pairs, vocab_words)


def reference_overlap(corpus):
    """Fraction of eval gold rewrites that also appear verbatim as train sentences."""
    train = {tuple(t) for t, _ in corpus.train}
    refs = [tuple(r) for p in corpus.eval for rs in p.refs.values() for r in rs]
    hits = sum(r in train for r in refs)
    frac = hits / max(len(refs), 1)
    return {"references": len(refs), "in_train": hits, "fraction": frac, "flagged": frac > 0.05}


# file format ------------------------------------------------------------------------


def _write_jsonl(path, records):
    lines = [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_corpus(corpus, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "train.jsonl", [{"tokens": t, "style": s} for t, s in corpus.train])
    _write_jsonl(out / "eval.jsonl", [p.to_record() for p in corpus.eval])
    meta = {
        "styles": corpus.styles,
        "lexicons": {s: {"markers": list(l.markers), "intensifiers": list(l.intensifiers)}
                     for s, l in corpus.lexicons.items()},
        "vocab": corpus.vocab_words,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [out / "train.jsonl", out / "eval.jsonl", out / "meta.json"]


def load_corpus(in_dir):
    d = Path(in_dir)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    lex = {s: StyleLexicon(s, tuple(v["markers"]), tuple(v["intensifiers"])) for s, v in meta["lexicons"].items()}
    train = [(r["tokens"], r["style"]) for r in read_jsonl(d / "train.jsonl")]
    pairs = [ParallelPair(r["tokens"], r["style"], r["refs"]) for r in read_jsonl(d / "eval.jsonl")]
    return Corpus(meta["styles"], lex, train, pairs, meta["vocab"])


# salience and masking -----------------------------------------------------------------


def style_counts(train):
    counts = {}
    for toks, style in train:
        counts.setdefault(style, Counter()).update(toks)
    return counts


def salience(word, counts, epsilon=1.0):
    """max over ordered style pairs (a, b) of (count(w|a)+eps) / (count(w|b)+eps)."""
    if not any(c.get(word, 0) for c in counts.values()):
        return 1.0
    best = 0.0
    for a, b in itertools.permutations(counts, 2):
        best = max(best, (counts[a].get(word, 0) + epsilon) / (counts[b].get(word, 0) + epsilon))
    return best


def is_number(word):
    return word.isdigit()


@dataclass
class MaskPolicy:
    """Which tokens may be masked.  ``MaskPolicy.any()`` masks uniformly."""

    salience: dict = field(default_factory=dict)
    threshold: float = 2.0
    skip_words: frozenset = SKIP_WORDS
    skip_numbers: bool = True

    @classmethod
    def from_counts(cls, counts, threshold=2.0, epsilon=1.0):
        words = set().union(*[set(c) for c in counts.values()])
        return cls({w: salience(w, counts, epsilon) for w in words}, threshold)

    @classmethod
    def any(cls):
        return cls({}, 0.0, frozenset(), False)

    def maskable(self, word):
        if self.skip_numbers and is_number(word):
            return False
        if word in self.skip_words:
            return False
        return self.salience.get(word, 1.0) >= self.threshold


def make_masked_sample(ids, style, rng, policy, vocab):
    """Mask one policy-approved position; returns None when nothing qualifies."""
    words = vocab.decode(ids)
    positions = [i for i, w in enumerate(words) if policy.maskable(w)]
    if not positions:
        return None
    i = positions[rng.integers(len(positions))]
    ids = list(ids)
    pred = ids[:i] + [MASK] + ids[i + 1:]
    return MaskedSample(pred, [ids[i]] + pred, ids[i], style, i, ids)


def make_null_sample(ids, style, rng):
    """Insert a [MASK] between two tokens without removing any; the target is [PAD]."""
    ids = list(ids)
    j = int(rng.integers(len(ids) + 1))
    return MaskedSample(ids[:j] + [MASK] + ids[j:], None, PAD, style, j, ids)


def make_gap_sample(ids, style, rng, max_gap=3, single_rate=None):
    """Remove k consecutive tokens, k uniform in [1, max_gap].

    With ``single_rate`` set, k=1 is drawn with that probability and the rest
    of the mass is spread uniformly over [2, max_gap].
    """
    ids = list(ids)
    if len(ids) <= max_gap:
        raise ValueError(f"sentence of length {len(ids)} too short for max_gap {max_gap}")
    if single_rate is None or max_gap == 1:
        k = int(rng.integers(1, max_gap + 1))
    else:
        k = 1 if rng.random() < single_rate else int(rng.integers(2, max_gap + 1))
    i = int(rng.integers(len(ids) - k + 1))
    return GapSample(ids[:i] + [MASK] + ids[i + k:], k, insert_label(k), style)


def batch_by_length(samples, batch_size=16, rng=None):
    """Sort by input length, slice consecutive batches, shuffle batch order."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    order = sorted(range(len(samples)), key=lambda j: len(samples[j].tokens))
    batches = [[samples[j] for j in order[s:s + batch_size]] for s in range(0, len(order), batch_size)]
    if rng is not None:
        batches = [batches[j] for j in rng.permutation(len(batches))]
    return batches


def length_spread(batches):
    return max((max(len(s.tokens) for s in b) - min(len(s.tokens) for s in b) for b in batches), default=0)

import copy
import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlm.corpus import (
    DEFAULT_GRAMMAR,
    SKIP_WORDS,
    GrammarError,
    MaskPolicy,
    batch_by_length,
    generate_corpus,
    length_spread,
    load_corpus,
    make_gap_sample,
    make_masked_sample,
    make_null_sample,
    reference_overlap,
    salience,
    save_corpus,
    style_counts,
)
from rlm.model import INSERT, MASK, PAD, STOP


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(n_train=2000, n_eval=100, seed=0)


def test_generation_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    save_corpus(generate_corpus(n_train=300, n_eval=30, seed=5), a)
    save_corpus(generate_corpus(n_train=300, n_eval=30, seed=5), b)
    for name in ("train.jsonl", "eval.jsonl", "meta.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert generate_corpus(n_train=300, n_eval=30, seed=6).train != generate_corpus(n_train=300, n_eval=30, seed=5).train


def test_file_format(tmp_path, corpus):
    save_corpus(corpus, tmp_path)
    text = (tmp_path / "eval.jsonl").read_text("utf-8")
    assert text.endswith("\n") and not text.endswith("\n\n")
    rec = json.loads(text.splitlines()[0])
    assert set(rec) == {"tokens", "style", "refs"}
    train_rec = json.loads((tmp_path / "train.jsonl").read_text("utf-8").splitlines()[0])
    assert set(train_rec) == {"tokens", "style"}
    back = load_corpus(tmp_path)
    assert back.train == corpus.train and back.eval == corpus.eval and back.vocab_words == corpus.vocab_words


def test_unequal_length_gold_pair_exists(corpus):
    pairs = [(p.source, r) for p in corpus.eval for rs in p.refs.values() for r in rs]
    assert any(len(s) != len(r) for s, r in pairs)
    # the canonical shape: "the food was really great ." -> "the food was bad ."
    g = generate_corpus(n_train=10, n_eval=2000, seed=1)
    found = [(p.source, p.refs["neg"]) for p in g.eval
             if p.style == "pos" and "really" in p.source and len(p.source) == 6]
    assert found and all(len(r[0]) == 5 for _, r in found)


def test_markers_disjoint_and_references_touch_markers_only(corpus):
    lex = corpus.lexicons
    assert not (lex["pos"].words & lex["neg"].words)
    style_words = lex["pos"].words | lex["neg"].words
    for p in corpus.eval:
        for refs in p.refs.values():
            for r in refs:
                assert [w for w in p.source if w not in style_words] == [w for w in r if w not in style_words]


def test_train_has_no_references(corpus):
    assert all(len(item) == 2 for item in corpus.train)


def test_reference_overlap_reported(corpus):
    rep = reference_overlap(corpus)
    assert set(rep) == {"references", "in_train", "fraction", "flagged"}
    assert rep["flagged"] == (rep["fraction"] > 0.05)
    assert 0 < rep["in_train"] < rep["references"]
    print("reference overlap:", rep)


def test_empty_lexicon_rejected():
    g = copy.deepcopy(DEFAULT_GRAMMAR)
    g["categories"] = {}
    with pytest.raises(GrammarError):
        generate_corpus(g, n_train=10, n_eval=2)


def test_length_limit_enforced():
    with pytest.raises(GrammarError):
        generate_corpus(n_train=50, n_eval=5, max_len=12)


def test_vocab_small(corpus):
    assert len(corpus.vocab_words) + 4 <= 300


# salience -----------------------------------------------------------------------

def test_salience_examples():
    counts = {"pos": Counter({"w": 9, "p": 10, "e": 3}), "neg": Counter({"w": 1, "e": 3})}
    assert salience("w", counts, 1.0) == 5.0
    assert salience("e", counts, 1.0) == 1.0
    assert salience("p", counts, 1.0) == 11.0
    assert salience("unseen", counts, 1.0) == 1.0


@given(st.integers(0, 50), st.integers(0, 50), st.floats(0.1, 10), st.floats(0.1, 10))
def test_salience_scale_covariant(a, b, eps, scale):
    counts = {"pos": Counter({"w": a}), "neg": Counter({"w": b})}
    scaled = {"pos": Counter({"w": a * scale}), "neg": Counter({"w": b * scale})}
    if a == b == 0:
        return
    assert salience("w", scaled, eps * scale) == pytest.approx(salience("w", counts, eps), rel=1e-12)


@given(st.integers(1, 100), st.floats(0.01, 10))
def test_salience_balanced_is_one(n, eps):
    counts = {"pos": Counter({"w": n}), "neg": Counter({"w": n})}
    assert salience("w", counts, eps) == 1.0


def test_markers_pass_threshold_scaffold_does_not(corpus):
    policy = MaskPolicy.from_counts(style_counts(corpus.train))
    for lex in corpus.lexicons.values():
        assert all(policy.maskable(w) for w in lex.words)
    for w in ("it", "was", ".", "the", "and", "7"):
        assert not policy.maskable(w)


# samples -------------------------------------------------------------------------

def test_masked_samples(corpus):
    vocab = corpus.vocab()
    policy = MaskPolicy.from_counts(style_counts(corpus.train))
    rng = np.random.default_rng(0)
    made = skipped = 0
    for toks, style in corpus.train[:300]:
        ids = vocab.encode(toks)
        s = make_masked_sample(ids, corpus.style_id(style), rng, policy, vocab)
        if s is None:
            skipped += 1
            continue
        made += 1
        assert s.tokens.count(MASK) == 1
        word = vocab.itos[s.target]
        assert policy.maskable(word) and word not in SKIP_WORDS and not word.isdigit()
        assert s.recon_tokens == [s.target] + s.tokens
        assert s.tokens[s.position] == MASK and s.source[s.position] == s.target
    assert made > 250


def test_it_was_great():
    counts = {"pos": Counter({"it": 5, "was": 5, "great": 5, ".": 5}), "neg": Counter({"it": 5, "was": 5, ".": 5})}
    policy = MaskPolicy.from_counts(counts)
    assert [w for w in "it was great .".split() if policy.maskable(w)] == ["great"]


def test_all_stopword_sentence_skipped(corpus):
    vocab = corpus.vocab()
    policy = MaskPolicy.from_counts(style_counts(corpus.train))
    ids = vocab.encode(["the", "was", "."])
    assert make_masked_sample(ids, 0, np.random.default_rng(0), policy, vocab) is None


def test_null_sample_inserts_mask():
    s = make_null_sample([5, 6, 7], 1, np.random.default_rng(3))
    assert s.tokens.count(MASK) == 1 and len(s.tokens) == 4 and s.target == PAD and s.recon_tokens is None
    assert [t for t in s.tokens if t != MASK] == [5, 6, 7]


@settings(max_examples=200)
@given(st.integers(4, 20), st.integers(0, 10**6))
def test_gap_samples_follow_label_rule(n, seed):
    ids = list(range(4, 4 + n))
    g = make_gap_sample(ids, 0, np.random.default_rng(seed), max_gap=3)
    assert 1 <= g.k <= 3
    assert g.label == (INSERT if g.k >= 2 else STOP)
    assert g.tokens.count(MASK) == 1 and len(g.tokens) == n - g.k + 1
    i = g.tokens.index(MASK)
    assert g.tokens[:i] + ids[i:i + g.k] + g.tokens[i + 1:] == ids


def test_gap_sample_needs_long_enough_sentence():
    with pytest.raises(ValueError):
        make_gap_sample([4, 5, 6], 0, np.random.default_rng(0), max_gap=3)


# batching ------------------------------------------------------------------------

class _S:
    def __init__(self, n):
        self.tokens = [0] * n


def test_batches_equal_lengths_zero_spread():
    assert length_spread(batch_by_length([_S(5)] * 40, 16, np.random.default_rng(0))) == 0


def test_batches_sorted_slicing():
    batches = batch_by_length([_S(n) for n in range(32, 0, -1)], 16)
    assert len(batches) == 2 and length_spread(batches) <= 15


def test_batches_deterministic():
    samples = [_S(n) for n in np.random.default_rng(0).integers(1, 30, size=100)]
    a = batch_by_length(samples, 16, np.random.default_rng(4))
    b = batch_by_length(samples, 16, np.random.default_rng(4))
    assert [[id(s) for s in x] for x in a] == [[id(s) for s in x] for x in b]
    with pytest.raises(ValueError):
        batch_by_length(samples, 0)


def test_gap_single_rate_shifts_widths():
    rng = np.random.default_rng(0)
    ks = [make_gap_sample(list(range(4, 14)), 0, rng, 3, single_rate=0.75).k for _ in range(4000)]
    assert abs(ks.count(1) / len(ks) - 0.75) < 0.03
    assert set(ks) == {1, 2, 3}
    assert {make_gap_sample(list(range(4, 14)), 0, rng, 3, single_rate=1.0).k for _ in range(50)} == {1}

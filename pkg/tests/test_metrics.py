import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rlm.corpus import generate_corpus
from rlm.metrics import (
    EmptyCandidateWarning,
    LinearStyleClassifier,
    RuleClassifier,
    ablation_table,
    bleu,
    corpus_bleu,
    evaluate_outputs,
    evaluate_run,
    geometric_mean,
    gold_transfer,
    identity_transfer,
    style_accuracy,
)

from helpers import ALL_ROWS


words = st.lists(st.sampled_from("a b c d e f g h".split()), min_size=1, max_size=30)


# bleu ------------------------------------------------------------------------

@given(words)
def test_bleu_identity_is_100(x):
    assert math.isclose(bleu(x, [x]), 100.0)


def test_bleu_worked_example():
    # 1-grams 2/3, 2-grams 1/2, 3-grams 0/1 -> smoothed 1/2; equal lengths so no brevity penalty
    expected = 100 * (2 / 3 * 1 / 2 * 1 / 2) ** (1 / 3)
    assert math.isclose(bleu("the cat sat".split(), ["the cat ran".split()]), expected, rel_tol=1e-12)
    assert abs(expected - 55.0321) < 1e-4


def test_bleu_zero_overlap_long_sentence():
    cand = [f"a{i}" for i in range(200)]
    ref = [f"b{i}" for i in range(200)]
    assert bleu(cand, [ref]) < 1.0


def test_bleu_empty_candidate_flagged():
    with pytest.warns(EmptyCandidateWarning):
        assert bleu([], [["x"]]) == 0.0


def test_bleu_case_insensitive():
    assert bleu("The Cat".split(), ["the cat".split()]) == 100.0


def test_bleu_brevity_penalty_uses_closest_reference():
    short = "a b c d".split()
    long_ref = "a b c d e f g h".split()
    assert bleu(short, [long_ref]) < bleu(short, [long_ref, short])


@given(words, words, st.permutations("abcdefgh"))
def test_bleu_relabel_invariant(c, r, perm):
    relabel = dict(zip("abcdefgh", perm))
    assert bleu(c, [r]) == bleu([relabel[w] for w in c], [[relabel[w] for w in r]])


def test_corpus_bleu_pools_counts():
    cands = ["a b c".split(), "d e".split()]
    refs = [["a b c".split()], ["d f".split()]]
    assert corpus_bleu(cands, refs) != np.mean([bleu(c, r) for c, r in zip(cands, refs)])


# geometric mean ---------------------------------------------------------------

@pytest.mark.parametrize("row", ALL_ROWS)
def test_printed_gm_reproduced(row):
    acc, rb, sb, gm = row
    assert abs(geometric_mean(acc, rb, sb) - gm) <= 0.1


def test_gm_headline_rows():
    assert abs(geometric_mean(91.0, 30.6, 51.7) - 52.4) <= 0.05
    assert abs(geometric_mean(57.5, 30.9, 54.7) - 46.0) <= 0.05


@given(st.floats(0, 100))
def test_gm_of_equal_values(x):
    assert abs(geometric_mean(x, x, x) - x) <= 1e-9


def test_gm_rejects_negative():
    with pytest.raises(ValueError):
        geometric_mean(-1, 2, 3)


# accuracy and evaluation --------------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(n_train=200, n_eval=60, seed=2)


def test_rule_classifier_exact_on_gold(corpus):
    rep = evaluate_run(gold_transfer(corpus.eval), corpus.eval, corpus.styles, RuleClassifier(corpus.lexicons))
    assert rep.acc == 100.0 and math.isclose(rep.ref_bleu, 100.0)


def test_identity_stub(corpus):
    rep = evaluate_run(identity_transfer, corpus.eval, corpus.styles, RuleClassifier(corpus.lexicons))
    assert rep.acc == 0.0 and math.isclose(rep.self_bleu, 100.0) and rep.gm == 0.0


def test_half_half_accuracy(corpus):
    clf = RuleClassifier(corpus.lexicons)
    gold = gold_transfer(corpus.eval)
    jobs = [(p, t) for p in corpus.eval for t in corpus.styles if t != p.style]
    outs = [gold(p.source, p.style, t) if j % 2 == 0 else list(p.source) for j, (p, t) in enumerate(jobs)]
    acc, flagged = style_accuracy(outs, [t for _, t in jobs], clf)
    assert acc == 50.0 and not flagged


def test_mixed_markers_counted_wrong_and_flagged(corpus):
    clf = RuleClassifier(corpus.lexicons)
    acc, flagged = style_accuracy([["the", "food", "was", "great", "and", "bad"]], ["pos"], clf)
    assert acc == 0.0 and flagged == [0]


def test_report_gm_recomputable(corpus):
    clf = RuleClassifier(corpus.lexicons)
    outs = [list(p.source[:-2]) + ["great", "."] for p in corpus.eval]
    targets = ["pos" if p.style == "neg" else "neg" for p in corpus.eval]
    rep = evaluate_outputs(corpus.eval, outs, targets, clf)
    assert abs(rep.gm - (rep.acc * rep.ref_bleu * rep.self_bleu) ** (1 / 3)) <= 0.05
    assert set(rep.to_record()) == {"acc", "self_bleu", "ref_bleu", "gm", "config"}
    assert len(rep.to_record(with_rows=True)["rows"]) == len(outs)


def test_linear_classifier_learns_markers(corpus):
    clf = LinearStyleClassifier().fit([t for t, _ in corpus.train], [s for _, s in corpus.train])
    rep = evaluate_run(gold_transfer(corpus.eval), corpus.eval, corpus.styles, clf)
    assert rep.acc >= 90.0


def test_ablation_table_format():
    class R:
        acc, ref_bleu, self_bleu, gm = 91.0, 30.6, 51.7, 52.4

    lines = ablation_table([("Top-1", R), ("No I(s;c)", R)]).splitlines()
    assert lines[0].split() == ["RLM", "ACC", "R-BLEU", "S-BLEU", "GM"]
    assert lines[1].split() == ["Top-1", "91.0", "30.6", "51.7", "52.4"]
    assert len(lines) == 3

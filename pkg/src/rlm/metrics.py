"""Automatic transfer metrics: style accuracy, Self-/Ref-BLEU and their geometric mean."""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _norm(tokens):
    return [t.lower() for t in tokens]


def corpus_bleu(candidates, references, max_n=4):
    """Corpus BLEU in [0, 100].

    Clipped n-gram counts are pooled over the corpus before the geometric
    mean.  An order with no matches gets add-one smoothing, precision
    1 / (total + 1); orders for which no candidate has any n-grams are left
    out.  The brevity penalty uses, per sentence, the reference length
    closest to the candidate (shorter wins ties).  Tokens are lower-cased.
    """
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        cand = _norm(cand)
        refs = [_norm(r) for r in refs]
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        cand_len += len(cand)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(cand)), L))
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            if not counts:
                continue
            best = Counter()
            for r in refs:
                best |= _ngrams(r, n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            totals[n - 1] += sum(counts.values())
    if cand_len == 0:
        return 0.0
    logs = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        logs.append(math.log(m / t) if m else math.log(1.0 / (t + 1)))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


class EmptyCandidateWarning(UserWarning):
    pass


def bleu(candidate, references, max_n=4):
    """Sentence BLEU (a corpus of one).  Empty candidates score 0 and warn."""
    if not candidate:
        warnings.warn("empty candidate scored as 0", EmptyCandidateWarning, stacklevel=2)
        return 0.0
    return corpus_bleu([candidate], [references], max_n)


def geometric_mean(acc, ref_bleu, self_bleu):
    if min(acc, ref_bleu, self_bleu) < 0:
        raise ValueError("metrics must be non-negative")
    prod = acc * ref_bleu * self_bleu
    if prod == 0:
        return 0.0
    # exp/log keeps gm(a, a, a) == a to rounding
    return math.exp((math.log(acc) + math.log(ref_bleu) + math.log(self_bleu)) / 3.0)


# classifiers ----------------------------------------------------------------------


class RuleClassifier:
    """Marker-lexicon membership; exact on the synthetic grammar.

    Returns the single style whose markers occur, or None when no style's
    markers occur or when several do (mixed output).
    """

    def __init__(self, lexicons):
        self.words = {style: frozenset(lex.words) for style, lex in lexicons.items()}

    def styles_present(self, tokens):
        toks = set(_norm(tokens))
        return sorted(s for s, words in self.words.items() if toks & words)

    def predict(self, tokens):
        present = self.styles_present(tokens)
        return present[0] if len(present) == 1 else None


class LinearStyleClassifier:
    """Logistic regression over bag-of-tokens counts."""

    def __init__(self, C=1.0):
        from sklearn.feature_extraction.text import CountVectorizer
        from sklearn.linear_model import LogisticRegression

        self._vec = CountVectorizer(analyzer=lambda toks: _norm(toks))
        self._clf = LogisticRegression(C=C, max_iter=1000)

    def fit(self, sentences, styles):
        self._clf.fit(self._vec.fit_transform(sentences), styles)
        return self

    def predict(self, tokens):
        return self._clf.predict(self._vec.transform([tokens]))[0]


def style_accuracy(outputs, target_styles, classifier):
    """Percent of outputs classified as their target style, plus indices of mixed outputs."""
    if not outputs:
        return 0.0, []
    correct, flagged = 0, []
    for j, (toks, style) in enumerate(zip(outputs, target_styles)):
        if hasattr(classifier, "styles_present") and len(classifier.styles_present(toks)) > 1:
            flagged.append(j)
            continue
        correct += classifier.predict(toks) == style
    return 100.0 * correct / len(outputs), flagged


# run-level evaluation -----------------------------------------------------------------


@dataclass
class EvalReport:
    acc: float
    self_bleu: float
    ref_bleu: float
    gm: float
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_record(self, with_rows=False):
        rec = asdict(self)
        if not with_rows:
            rec.pop("rows")
        return rec

    def to_json(self, with_rows=False):
        return json.dumps(self.to_record(with_rows), sort_keys=True, indent=2)

    def table(self, name="RLM"):
        return ablation_table([(name, self)])


def evaluate_outputs(pairs, outputs, target_styles, classifier, config=None):
    """Metrics for given transfer outputs of ``pairs`` (ParallelPairs)."""
    acc, flagged = style_accuracy(outputs, target_styles, classifier)
    sources = [p.source for p in pairs]
    refs = [p.refs[t] for p, t in zip(pairs, target_styles)]
    s_bleu = corpus_bleu(outputs, [[s] for s in sources])
    r_bleu = corpus_bleu(outputs, refs)
    flagged_set = set(flagged)
    rows = [
        {
            "source": p.source, "style": p.style, "target_style": t, "output": out,
            "predicted_style": classifier.predict(out), "mixed": j in flagged_set,
        }
        for j, (p, t, out) in enumerate(zip(pairs, target_styles, outputs))
    ]
    return EvalReport(acc, s_bleu, r_bleu, geometric_mean(acc, r_bleu, s_bleu), rows, dict(config or {}))


def transfer_targets(pairs, styles):
    """Each eval source paired with every style other than its own, in order."""
    out = []
    for p in pairs:
        for t in styles:
            if t != p.style and t in p.refs:
                out.append((p, t))
    return out


def evaluate_run(transfer_fn, pairs, styles, classifier, config=None):
    """Transfer every eval source to each other style and score the outputs.

    ``transfer_fn(tokens, source_style, target_style) -> tokens``.
    """
    jobs = transfer_targets(pairs, styles)
    outputs = [transfer_fn(p.source, p.style, t) for p, t in jobs]
    return evaluate_outputs([p for p, _ in jobs], outputs, [t for _, t in jobs], classifier, config)


def model_transfer_fn(model, vocab, styles, top_k=5, flags=None):
    from .decoder import DecodeFlags, transfer

    flags = flags or DecodeFlags()

    def fn(tokens, source_style, target_style):
        res = transfer(model, vocab.encode(tokens), styles.index(target_style), top_k, flags)
        return vocab.decode(res.output)

    return fn


def identity_transfer(tokens, source_style, target_style):
    return list(tokens)


def gold_transfer(pairs):
    """Stub decoder returning the first gold reference for each (source, target) job."""
    lookup = {(tuple(p.source), p.style, t): refs[0] for p in pairs for t, refs in p.refs.items()}

    def fn(tokens, source_style, target_style):
        return list(lookup[(tuple(tokens), source_style, target_style)])

    return fn


def ablation_table(named_reports):
    lines = [f"{'RLM':<22}{'ACC':>7}{'R-BLEU':>8}{'S-BLEU':>8}{'GM':>7}"]
    for name, r in named_reports:
        lines.append(f"{name:<22}{r.acc:7.1f}{r.ref_bleu:8.1f}{r.self_bleu:8.1f}{r.gm:7.1f}")
    return "\n".join(lines)


def mean_report(reports):
    """Average several EvalReports (e.g. over seeds) metric by metric."""
    acc = float(np.mean([r.acc for r in reports]))
    rb = float(np.mean([r.ref_bleu for r in reports]))
    sb = float(np.mean([r.self_bleu for r in reports]))
    return EvalReport(acc, sb, rb, geometric_mean(acc, rb, sb))

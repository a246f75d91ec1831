"""Brute-force checks of the decoder.

Written as straight-line code over the scorer interface: inputs are
re-assembled here rather than borrowed from :mod:`rlm.decoder`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoder import DecodeFlags, DecoderState, decode_step, sequence_score
from .model import RLM, ModelConfig

MAX_ORACLE_VOCAB = 64

# reserved ids, restated so this module does not lean on decoder helpers
_PAD, _MASK, _N_SPECIAL = 0, 1, 4
_INSERT, _STOP = 0, 1


class OracleRefusal(ValueError):
    pass


def exhaustive_step_argmax(state, scorer, delete=True):
    """Best token at ``state`` by evaluating pred * recon for every candidate.

    Iterates ids in ascending order and keeps a strict maximum, so ties go to
    the lowest id.
    """
    pred, _ = scorer.prediction(state.output + [_MASK] + state.source[state.position + 1:], state.style)
    n_tokens = len(pred) - _N_SPECIAL
    if n_tokens > MAX_ORACLE_VOCAB:
        raise OracleRefusal(f"vocabulary of {n_tokens} words exceeds oracle limit {MAX_ORACLE_VOCAB}")
    i = state.position
    x_i = state.source[i]
    context = state.source[:i] + [_MASK] + state.source[i + 1:]
    tokens = list(range(_N_SPECIAL, len(pred)))
    if delete and len(state.span) == 0:
        tokens = [_PAD] + tokens
    best, best_score = None, -1.0
    for tok in tokens:
        if tok == _PAD:
            recon_in = list(state.span) + context
        else:
            recon_in = list(state.span) + [tok] + context
        score = pred[tok] * scorer.reconstruction(recon_in)[x_i]
        if score > best_score:
            best, best_score = tok, score
    return best


def _flog(p):
    return math.log(max(p, 1e-12))


def independent_score(source, output, alignment, style, scorer, insert=True):
    n = len(source)
    if len(alignment) != n + 1 or alignment[0] != 0 or alignment[n] != len(output):
        raise ValueError("invalid alignment")
    if any(alignment[j + 1] < alignment[j] for j in range(n)):
        raise ValueError("invalid alignment")
    logs = []
    for i in range(n):
        lo, hi = alignment[i], alignment[i + 1]
        x_i = source[i]
        suffix = list(source[i + 1:])
        masked_source = list(source[:i]) + [_MASK] + suffix
        if hi == lo:
            p, _ = scorer.prediction(list(output[:lo]) + [_MASK] + suffix, style)
            r = scorer.reconstruction(masked_source)
            logs.append(_flog(p[_PAD]) + _flog(r[x_i]))
            continue
        for t in range(lo, hi):
            p, q = scorer.prediction(list(output[:t]) + [_MASK] + suffix, style)
            r = scorer.reconstruction(list(output[lo:t + 1]) + masked_source)
            term = _flog(p[output[t]]) + _flog(r[x_i])
            if insert:
                term += _flog(q[_INSERT]) if t + 1 < hi else _flog(q[_STOP])
            logs.append(term)
    return math.fsum(logs)


@dataclass
class OracleReport:
    instances: int = 0
    steps: int = 0
    agreements: int = 0
    step_disagreements: int = 0
    max_score_divergence: float = 0.0
    worst_case: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.step_disagreements == 0 and self.agreements == self.instances and self.max_score_divergence < 1e-9

    def to_record(self):
        rec = asdict(self)
        rec["passed"] = self.passed
        return rec


def random_tiny_model(rng, n_words, max_len=16, init_std=1.0):
    cfg = ModelConfig(
        vocab_size=n_words + _N_SPECIAL, n_styles=2, d=8, n_layers=1, n_heads=1, d_ff=16,
        max_len=max_len, init_std=init_std, seed=int(rng.integers(2**31)),
    )
    return RLM(cfg)


def run_oracle_check(n_instances=200, max_vocab=12, max_len=4, seed=0, scorer=None, flags=None):
    """Decode random instances step by step; compare each choice and the final score.

    With ``scorer`` given, only the sources and styles are random; otherwise
    every instance gets a freshly initialised tiny model.
    """
    rng = np.random.default_rng(seed)
    report = OracleReport()
    for inst in range(n_instances):
        if scorer is None:
            n_words = int(rng.integers(2, max_vocab + 1))
            model = random_tiny_model(rng, n_words)
        else:
            model = scorer
            n_words = len(model.prediction([_MASK], 0)[0]) - _N_SPECIAL
        f = flags or DecodeFlags(
            insert=bool(rng.integers(2)), delete=bool(rng.integers(2)), max_insert=int(rng.integers(1, 4))
        )
        n = int(rng.integers(1, max_len + 1))
        source = [int(t) for t in rng.integers(_N_SPECIAL, _N_SPECIAL + n_words, size=n)]
        style = int(rng.integers(2))
        K = n_words + 1
        state = DecoderState(source, style)
        agree = True
        while not state.done:
            expected = exhaustive_step_argmax(state, model, delete=f.delete)
            state = decode_step(model, state, K, f)
            report.steps += 1
            if state.trace[-1].chosen.token != expected:
                agree = False
                report.step_disagreements += 1
        oracle_log = independent_score(source, state.output, state.alignment, style, model, f.insert)
        dec_log = sequence_score(model, source, state.output, state.alignment, style, f.insert)
        div = max(
            abs(state.log_score - oracle_log) / max(1.0, abs(oracle_log)),
            abs(dec_log - oracle_log) / max(1.0, abs(oracle_log)),
        )
        report.instances += 1
        report.agreements += agree
        if div >= report.max_score_divergence or not agree:
            report.max_score_divergence = max(report.max_score_divergence, div)
            report.worst_case = {
                "instance": inst, "source": source, "style": style, "output": state.output,
                "alignment": state.alignment, "decoder_log": state.log_score,
                "oracle_log": oracle_log, "agree": agree,
            }
    return report

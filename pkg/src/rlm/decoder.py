"""Greedy replacing decoder with deletion ([PAD]) and insertion runs.

The decoder talks to a *scorer*: anything with

* ``prediction(seq, style) -> (pred_dist, insert_dist)`` and
* ``reconstruction(seq) -> recon_dist``

where ``seq`` is a token-id list holding exactly one ``[MASK]``.  Both
:class:`rlm.model.RLM` and :class:`rlm.stub.StubModel` qualify.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autograd import PROB_FLOOR
from .model import INSERT, MASK, PAD, SPECIALS, STOP


class DecodeComplete(RuntimeError):
    pass


def _log(p):
    return math.log(max(p, PROB_FLOOR))


@dataclass(frozen=True)
class DecodeFlags:
    insert: bool = True
    delete: bool = True
    max_insert: int = 4


@dataclass(frozen=True)
class Candidate:
    token: int
    pred: float
    recon: float

    @property
    def combined(self):
        return self.pred * self.recon


@dataclass
class StepTrace:
    position: int
    chosen: Candidate
    pool: list
    insert_factor: float | None
    log_score: float


@dataclass
class DecoderState:
    source: list
    style: int
    output: list = field(default_factory=list)
    alignment: list = field(default_factory=lambda: [0])
    position: int = 0
    span: list = field(default_factory=list)
    run: int = 0
    trace: list = field(default_factory=list)
    log_score: float = 0.0

    @property
    def done(self):
        return self.position >= len(self.source)

    def prediction_input(self):
        return self.output + [MASK] + self.source[self.position + 1:]

    def reconstruction_input(self, token):
        i = self.position
        head = self.span + ([] if token == PAD else [token])
        return head + self.source[:i] + [MASK] + self.source[i + 1:]


@dataclass
class TransferResult:
    output: list
    alignment: list
    log_score: float
    trace: list

    def to_record(self, vocab, source, style):
        return {
            "source": vocab.decode(source),
            "style": style,
            "tokens": vocab.decode(self.output),
            "alignment": self.alignment,
            "log_score": self.log_score,
        }


def candidate_tokens(vocab_size, state, flags):
    """Tokens allowed at this step: all words, plus [PAD] at the start of a span when deleting."""
    words = list(range(len(SPECIALS), vocab_size))
    if flags.delete and not state.span:
        return [PAD] + words
    return words


def score_candidate(scorer, state, token, pred_dist):
    recon = scorer.reconstruction(state.reconstruction_input(token))
    return Candidate(token, float(pred_dist[token]), float(recon[state.source[state.position]]))


def topk_candidates(scorer, state, K, flags=DecodeFlags(), pred_dist=None):
    """Pool = top-K tokens by prediction probability; returned sorted by combined score.

    Ties (in either ranking) go to the lower token id.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if pred_dist is None:
        pred_dist, _ = scorer.prediction(state.prediction_input(), state.style)
    allowed = np.asarray(candidate_tokens(len(pred_dist), state, flags))
    pool = allowed[np.argsort(-pred_dist[allowed], kind="stable")[:K]]
    batch = getattr(scorer, "reconstruction_batch", None)
    if batch is None:
        cands = [score_candidate(scorer, state, int(t), pred_dist) for t in pool]
    else:
        # score every allowed token in one batch whose makeup does not depend on K,
        # so the numbers (down to the last bit) are the same for every pool size
        x_i = state.source[state.position]
        recon = batch([state.reconstruction_input(int(t)) for t in allowed])[:, x_i]
        row = {int(t): j for j, t in enumerate(allowed)}
        cands = [Candidate(int(t), float(pred_dist[t]), float(recon[row[int(t)]])) for t in pool]
    cands.sort(key=lambda c: (-c.combined, c.token))
    return cands


def _may_continue(state, scorer, flags):
    if state.run >= flags.max_insert:
        return False
    max_len = getattr(scorer, "max_len", None)
    if max_len is None:
        return True
    pred_len = len(state.output) + 1 + len(state.source) - state.position - 1 + 2
    recon_len = len(state.span) + 1 + len(state.source) + 2
    return pred_len <= max_len and recon_len <= max_len


def decode_step(scorer, state, K, flags=DecodeFlags()):
    """Advance the state machine by one generated token (or one deletion)."""
    if state.done:
        raise DecodeComplete("decode complete")
    pred, ins = scorer.prediction(state.prediction_input(), state.style)
    pool = topk_candidates(scorer, state, K, flags, pred_dist=pred)
    best = pool[0]
    step_log = _log(best.pred) + _log(best.recon)
    s = replace(
        state, output=list(state.output), alignment=list(state.alignment),
        span=list(state.span), trace=list(state.trace),
    )
    factor = None
    if best.token == PAD:
        s.alignment.append(len(s.output))
        s.position += 1
    else:
        s.output.append(best.token)
        s.span.append(best.token)
        more = False
        if flags.insert:
            more = bool(ins[INSERT] > ins[STOP]) and _may_continue(s, scorer, flags)
            factor = float(ins[INSERT] if more else ins[STOP])
            step_log += _log(factor)
        if more:
            s.run += 1
        else:
            s.alignment.append(len(s.output))
            s.span, s.run = [], 0
            s.position += 1
    s.log_score = state.log_score + step_log
    s.trace.append(StepTrace(state.position, best, pool, factor, step_log))
    return s


def transfer(scorer, source, style, K=5, flags=DecodeFlags()):
    source = list(source)
    if not source:
        raise ValueError("cannot transfer an empty sentence")
    max_len = getattr(scorer, "max_len", None)
    if max_len is not None and len(source) + 3 > max_len:
        raise ValueError(f"sentence of {len(source)} tokens too long for max_len {max_len}")
    state = DecoderState(source, style)
    while not state.done:
        state = decode_step(scorer, state, K, flags)
    return TransferResult(state.output, state.alignment, state.log_score, state.trace)


def validate_alignment(source, output, alignment, max_span=None):
    n = len(source)
    if len(alignment) != n + 1:
        raise ValueError(f"alignment has {len(alignment)} entries, expected {n + 1}")
    if alignment[0] != 0 or alignment[-1] != len(output):
        raise ValueError("alignment must start at 0 and end at len(output)")
    for a, b in zip(alignment, alignment[1:]):
        if b < a:
            raise ValueError("alignment must be non-decreasing")
        if max_span is not None and b - a > max_span:
            raise ValueError(f"span of {b - a} tokens exceeds {max_span}")


def sequence_score(scorer, source, output, alignment, style, insert=True):
    """log P_RLM(Y | X, s) recomputed factor by factor.

    Per source token: an empty span scores P([PAD]) times the empty-span
    reconstruction; otherwise every span token scores its prediction times the
    reconstruction from the span prefix ending at it, and (with ``insert``)
    the insertion head's continue/stop probability.
    """
    source, output = list(source), list(output)
    validate_alignment(source, output, alignment)
    total = 0.0
    for i, x in enumerate(source):
        start, end = alignment[i], alignment[i + 1]
        rest = source[i + 1:]
        recon_tail = source[:i] + [MASK] + rest
        if start == end:
            pred, _ = scorer.prediction(output[:start] + [MASK] + rest, style)
            total += _log(pred[PAD]) + _log(scorer.reconstruction(recon_tail)[x])
            continue
        for t in range(start, end):
            pred, ins = scorer.prediction(output[:t] + [MASK] + rest, style)
            recon = scorer.reconstruction(output[start:t + 1] + recon_tail)
            total += _log(pred[output[t]]) + _log(recon[x])
            if insert:
                total += _log(ins[INSERT] if t < end - 1 else ins[STOP])
    return total

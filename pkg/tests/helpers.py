"""Shared builders for the test-suite."""

import numpy as np

from rlm import autograd as ag
from rlm.corpus import GapSample, MaskedSample
from rlm.model import MASK, PAD, RLM, ModelConfig
from rlm.objectives import LossWeights, QClassifier, compute_losses, q_loss


def tiny_model(vocab_size=16, d=8, seed=3, init_std=0.5):
    cfg = ModelConfig(vocab_size=vocab_size, d=d, n_layers=1, n_heads=1, d_ff=16, max_len=16,
                      init_std=init_std, seed=seed)
    return RLM(cfg)


def tiny_batch(vocab_size=16, seed=0):
    """Four substitution samples, one null sample, two gap samples."""
    rng = np.random.default_rng(seed)
    masked = []
    for b in range(4):
        ids = [int(t) for t in rng.integers(4, vocab_size, size=5)]
        i = b % 5
        pred = ids[:i] + [MASK] + ids[i + 1:]
        masked.append(MaskedSample(pred, [ids[i]] + pred, ids[i], b % 2, i, ids))
    masked.append(MaskedSample([5, MASK, 6, 7], None, PAD, 1, 1, [5, 6, 7]))
    gaps = [GapSample([5, MASK, 7], 1, 1, 0), GapSample([5, MASK], 2, 0, 1)]
    return masked, gaps


def full_loss_fn(model, q, masked, gaps, weights=None, top_k=3):
    weights = weights or LossWeights(beta=1.0, w_recon=1.0, w_insert=1.0, w_l3=0.5)

    def f():
        total, _ = compute_losses(model, q, masked, gaps, weights, top_k, np.random.default_rng(7), 2)
        return total

    return f


def q_loss_fn(model, q, masked):
    def f():
        with ag.no_grad():
            c = model.encode_batch([s.tokens for s in masked]).masked.detach()
        return -q_loss(q.log_probs(c), [s.style for s in masked])

    return f


def tiny_q(d=8, seed=4):
    return QClassifier(d, 2, seed=seed, init_std=0.5)


# every GM in the reference results: (ACC, R-BLEU, S-BLEU, GM)
# automatic and human scores on the first corpus, automatic on the second, then the ablations
REF_AUTO = [(74.2, 4.2, 13.2, 16.0), (88.3, 23.1, 44.4, 44.9), (87.3, 19.8, 55.2, 45.7),
            (55.4, 26.4, 48.4, 41.4), (91.3, 20.0, 59.4, 47.7), (91.0, 30.6, 51.7, 52.4)]
REF_HUMAN = [(3.4, 2.1, 4.1, 3.1), (3.5, 2.9, 4.2, 3.5), (4.0, 3.8, 4.3, 4.0),
             (3.5, 2.7, 4.4, 3.5), (4.1, 3.7, 4.2, 4.0), (4.5, 3.7, 4.3, 4.2)]
REF_AUTO_SECOND = [(65.0, 9.2, 20.7, 23.1), (58.3, 27.7, 57.3, 45.2), (40.0, 28.6, 39.7, 35.7),
                   (48.7, 36.1, 54.5, 45.7), (57.5, 30.9, 54.7, 46.0)]
REF_ABLATION = [(89.7, 30.0, 53.5, 52.4), (90.7, 29.5, 51.8, 51.8), (91.0, 30.6, 51.7, 52.4),
                (91.0, 29.5, 51.5, 51.7), (74.6, 27.7, 38.2, 42.9), (89.6, 31.0, 50.1, 51.8),
                (85.1, 29.7, 49.9, 50.1), (88.7, 29.1, 53.3, 51.6)]
ALL_ROWS = REF_AUTO + REF_HUMAN + REF_AUTO_SECOND + REF_ABLATION


# hand-enumerated V=2 stub ---------------------------------------------------------

A, B = 4, 5  # the two words of the V=2 stub


def dist(pad=0.0, a=0.0, b=0.0):
    return [pad, 0.0, 0.0, 0.0, a, b]


def rdist(a=0.0, b=0.0):
    # reconstruction rows put the leftover mass on [PAD]'s slot so rows stay normalised;
    # the decoder only ever reads the source token's entry
    return [1.0 - a - b, 0.0, 0.0, 0.0, a, b]


# Source X = [A, B], target style 0.
#
# step 1  pos 0, span [], input [MASK, B]
#   pred  PAD .5  A .3  B .2        insert [.6, .4] -> keep inserting
#   recon[A | span]:  PAD .1   A .9   B .5
#   product:          PAD .05  A .27  B .10        -> A, continue
# step 2  pos 0, span [A], input [A, MASK, B]   ([PAD] not allowed mid-span)
#   pred  PAD .1  A .2  B .7        insert [.3, .7] -> stop
#   recon[A | A + tok]:  A .5  B .4
#   product:             A .10 B .28               -> B, close span
# step 3  pos 1, span [], input [A, B, MASK]
#   pred  PAD .6  A .1  B .3        insert [.9, .1]
#   recon[B | span]:  PAD .8  A .3  B .9
#   product:          PAD .48 A .03 B .27          -> [PAD], delete x_1
# with deletion off, step 3 picks B and continues (insert .9 > .1):
# step 4  pos 1, span [B], input [A, B, B, MASK]
#   pred  PAD .2  A .5  B .3        insert [.2, .8] -> stop
#   recon[B | B + tok]:  A .1  B .6
#   product:             A .05 B .18               -> B
PRED = {
    ((MASK, B), 0): dist(.5, .3, .2),
    ((A, MASK, B), 0): dist(.1, .2, .7),
    ((A, B, MASK), 0): dist(.6, .1, .3),
    ((A, B, B, MASK), 0): dist(.2, .5, .3),
}
INS = {
    ((MASK, B), 0): [.6, .4],
    ((A, MASK, B), 0): [.3, .7],
    ((A, B, MASK), 0): [.9, .1],
    ((A, B, B, MASK), 0): [.2, .8],
}
RECON = {
    (MASK, B): rdist(a=.1),
    (A, MASK, B): rdist(a=.9),
    (B, MASK, B): rdist(a=.5),
    (A, A, MASK, B): rdist(a=.5),
    (A, B, MASK, B): rdist(a=.4),
    (A, MASK): rdist(b=.8),
    (A, A, MASK): rdist(b=.3),
    (B, A, MASK): rdist(b=.9),
    (B, A, A, MASK): rdist(b=.1),
    (B, B, A, MASK): rdist(b=.6),
}

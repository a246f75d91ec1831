"""
Replacing decoder on a two-word stub
====================================

Every probability the decoder sees comes from a hand-written table, so each
step can be checked by eye: the pool is the top-K tokens by prediction, and
the winner is the largest prediction x reconstruction product.
"""

import numpy as np

from rlm.decoder import DecodeFlags, transfer
from rlm.model import MASK
from rlm.stub import StubModel

A, B = 4, 5
names = {0: "[PAD]", A: "A", B: "B"}


def dist(pad=0.0, a=0.0, b=0.0):
    return [pad, 0.0, 0.0, 0.0, a, b]


def rdist(a=0.0, b=0.0):
    return [1.0 - a - b, 0.0, 0.0, 0.0, a, b]


pred = {
    ((MASK, B), 0): dist(.5, .3, .2),
    ((A, MASK, B), 0): dist(.1, .2, .7),
    ((A, B, MASK), 0): dist(.6, .1, .3),
    ((A, B, B, MASK), 0): dist(.2, .5, .3),
}
insert = {
    ((MASK, B), 0): [.6, .4],
    ((A, MASK, B), 0): [.3, .7],
    ((A, B, MASK), 0): [.9, .1],
    ((A, B, B, MASK), 0): [.2, .8],
}
recon = {
    (MASK, B): rdist(a=.1), (A, MASK, B): rdist(a=.9), (B, MASK, B): rdist(a=.5),
    (A, A, MASK, B): rdist(a=.5), (A, B, MASK, B): rdist(a=.4),
    (A, MASK): rdist(b=.8), (A, A, MASK): rdist(b=.3), (B, A, MASK): rdist(b=.9),
    (B, A, A, MASK): rdist(b=.1), (B, B, A, MASK): rdist(b=.6),
}
stub = StubModel(2, pred=pred, recon=recon, insert=insert, strict=True)

for flags in (DecodeFlags(insert=True, delete=True), DecodeFlags(insert=True, delete=False)):
    res = transfer(stub, [A, B], 0, K=3, flags=flags)
    print(f"\ninsert={flags.insert} delete={flags.delete}")
    for t in res.trace:
        pool = "  ".join(f"{names[c.token]} {c.pred:.2f}*{c.recon:.2f}={c.combined:.3f}" for c in t.pool)
        print(f"  x_{t.position}: {pool}  -> {names[t.chosen.token]}")
    print("  output", [names[t] for t in res.output], "alignment", res.alignment)
    print("  log-score", round(res.log_score, 6), "=", round(float(np.sum([t.log_score for t in res.trace])), 6))

"""Table-driven scorer for exercising decoding logic without a trained model."""

from __future__ import annotations

import numpy as np

from .model import BOS, EOS, MASK, PAD, SPECIALS


def _uniform(size, banned):
    p = np.ones(size)
    p[list(banned)] = 0.0
    return p / p.sum()


class StubModel:
    """Explicit prediction / reconstruction / insertion tables.

    Each table is either a dict keyed by the assembled input (a tuple of ids,
    plus the style for prediction and insertion) or a callable taking the
    same arguments.  Missing keys fall back to uniform distributions unless
    ``strict`` is set, in which case they raise ``KeyError``.
    """

    def __init__(self, n_words, pred=None, recon=None, insert=None, strict=False, max_len=None):
        self.vocab_size = n_words + len(SPECIALS)
        self.pred_table = pred if pred is not None else {}
        self.recon_table = recon if recon is not None else {}
        self.insert_table = insert if insert is not None else {}
        self.strict = strict
        self.max_len = max_len
        self.calls = 0
        for name, table in (("pred", self.pred_table), ("recon", self.recon_table)):
            if isinstance(table, dict):
                for key, row in table.items():
                    self._check_row(name, key, row, self.vocab_size)
        if isinstance(self.insert_table, dict):
            for key, row in self.insert_table.items():
                self._check_row("insert", key, row, 2)

    @staticmethod
    def _check_row(name, key, row, size):
        row = np.asarray(row, dtype=float)
        if row.shape != (size,) or abs(row.sum() - 1.0) > 1e-9 or np.any(row < 0):
            raise ValueError(f"{name} table row for {key!r} is not a normalised distribution over {size}")

    def _lookup(self, table, key, args, default):
        self.calls += 1
        if callable(table):
            return np.asarray(table(*args), dtype=float)
        if key in table:
            return np.asarray(table[key], dtype=float)
        if self.strict:
            raise KeyError(f"no table entry for {key!r}")
        return default()

    def prediction(self, seq, style):
        key = (tuple(seq), style)
        pred = self._lookup(self.pred_table, key, (tuple(seq), style),
                            lambda: _uniform(self.vocab_size, (MASK, BOS, EOS)))
        ins = self._lookup(self.insert_table, key, (tuple(seq), style), lambda: np.array([0.5, 0.5]))
        return pred, ins

    def reconstruction(self, seq):
        key = tuple(seq)
        return self._lookup(self.recon_table, key, (key,),
                            lambda: _uniform(self.vocab_size, (PAD, MASK, BOS, EOS)))


def point_mass(size, token):
    p = np.zeros(size)
    p[token] = 1.0
    return p

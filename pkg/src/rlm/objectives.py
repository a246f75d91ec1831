"""Training objectives: BA lower bound, CLUB upper bound, reconstruction, insertion.

The estimator functions take either a ``Tensor`` of log-probabilities or a
plain array of probabilities, so they can be exercised on hand-built
distributions as well as on model outputs.  :func:`compute_losses` wires them to a model and a training batch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .model import INSERT, MASK, PAD, STOP


class QClassifier:
    """Linear style classifier Q(s | c) over content embeddings."""

    def __init__(self, d, n_styles, seed=0, init_std=0.02, params=None):
        if params is None:
            rng = np.random.default_rng([seed, 7])
            params = {
                "q.w": Tensor(rng.normal(0.0, init_std, size=(d, n_styles)), requires_grad=True),
                "q.b": Tensor(np.zeros(n_styles), requires_grad=True),
            }
        self.params = params

    def log_probs(self, c, frozen=False):
        w, b = self.params["q.w"], self.params["q.b"]
        if frozen:
            w, b = w.detach(), b.detach()
        return ag.log_softmax(ag.matmul(c, w) + b)

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}


def _as_logp(logp):
    if isinstance(logp, Tensor):
        return logp
    return Tensor(ag.safe_log(np.asarray(logp, dtype=np.float64)))


def _pick(logp, targets):
    targets = np.asarray(targets, dtype=np.int64)
    return logp[np.arange(len(targets)), targets]


def l1_hat(pred_probs, targets):
    """Mean log-likelihood of the masked-out tokens (BA bound minus its constant).

    ``pred_probs`` is either a Tensor of log-probabilities or an array of
    probabilities.
    """
    return _pick(_as_logp(pred_probs), targets).mean()


def contrastive_log_ratio(logp, labels):
    """Positive-pair mean minus all-pairs mean of ``logp[u, labels[v]]``.

    Rows are centred on row 0 first; the estimate is unchanged, and a
    classifier whose output ignores its input then gives exactly 0.
    """
    logp = _as_logp(logp)
    labels = np.asarray(labels, dtype=np.int64)
    U = len(labels)
    if U < 2:
        raise ValueError("CLUB needs >=2 samples")
    centred = logp - logp[0:1]
    positive = _pick(centred, labels).mean()
    values, counts = np.unique(labels, return_counts=True)
    all_pairs = None
    for value, count in zip(values, counts):
        term = _pick(centred, np.full(U, value)).mean() * (count / U)
        all_pairs = term if all_pairs is None else all_pairs + term
    return positive - all_pairs


def l2_hat(q_log_probs, styles):
    """CLUB estimate of I(source style; content) given Q's log-probabilities."""
    return contrastive_log_ratio(q_log_probs, styles)


def l3_hat(recon_probs, targets):
    """Contrastive estimate over reconstruction log-probabilities (diagnostic)."""
    return contrastive_log_ratio(recon_probs, targets)


def recon_nll(recon_probs, targets):
    return -_pick(_as_logp(recon_probs), targets).mean()


def q_loss(q_log_probs, styles):
    """Mean log-likelihood of the source style under Q (maximised w.r.t. Q)."""
    return _pick(_as_logp(q_log_probs), styles).mean()


def insert_label(k):
    """[MASK] (keep inserting) iff at least two tokens were removed."""
    if k < 1:
        raise ValueError("gap width must be >= 1")
    return INSERT if k >= 2 else STOP


def insert_loss(insert_logits, labels):
    return ag.nll_from_logits(insert_logits, labels)


@dataclass
class LossWeights:
    beta: float = 1.0
    w_recon: float = 1.0
    w_insert: float = 1.0
    w_l3: float = 0.0

    def __post_init__(self):
        if min(self.beta, self.w_recon, self.w_insert, self.w_l3) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l1: float
    l2: float
    recon: float
    insert: float
    total: float
    l3: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)

    def recompute_total(self):
        w = self.weights
        return -self.l1 + w.beta * self.l2 + w.w_recon * self.recon + w.w_insert * self.insert - w.w_l3 * self.l3

    def to_record(self):
        rec = asdict(self)
        rec.pop("weights")
        return rec


def total_loss(parts, weights: LossWeights):
    """Combine loss parts; returns (differentiable total, LossBreakdown).

    ``parts`` maps l1/l2/recon/insert (and optionally l3) to Tensors or floats.
    """
    def val(x):
        return float(x.data) if isinstance(x, Tensor) else float(x)

    l3 = parts.get("l3", 0.0)
    total = (
        -_lift(parts["l1"])
        + _lift(parts["l2"]) * weights.beta
        + _lift(parts["recon"]) * weights.w_recon
        + _lift(parts["insert"]) * weights.w_insert
    )
    if weights.w_l3:
        total = total - _lift(l3) * weights.w_l3
    breakdown = LossBreakdown(
        l1=val(parts["l1"]), l2=val(parts["l2"]), recon=val(parts["recon"]),
        insert=val(parts["insert"]), total=float(total.data), l3=val(l3), weights=weights,
    )
    return total, breakdown


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# model wiring -------------------------------------------------------------------


def topk_ids(probs, k, allowed):
    """Top-k of ``probs`` restricted to ``allowed`` ids; ties go to the lower id."""
    allowed = np.asarray(sorted(allowed), dtype=np.int64)
    order = np.argsort(-probs[allowed], kind="stable")
    return allowed[order[:k]].tolist()


def reconstruction_inputs(sample, candidates):
    """(span, X_{0:i}, [MASK], X_{i+1:n}) for each candidate; [PAD] means an empty span."""
    i = sample.position
    x = sample.source
    return [([] if y == PAD else [y]) + x[:i] + [MASK] + x[i + 1:] for y in candidates]


def compute_losses(model, q, masked, gaps, weights: LossWeights, top_k, rng, n_styles):
    """Forward every term of the main objective on one batch.

    masked: MaskedSample list (null samples carry target [PAD] and no
    reconstruction form); gaps: GapSample list.  Reconstruction candidates are
    the source token itself plus the top-k predictions under a different style.
    """
    styles = np.array([s.style for s in masked])
    targets = np.array([s.target for s in masked])
    enc = model.encode_batch([s.tokens for s in masked])
    e = model.fuse_batch(styles, enc)
    l1 = l1_hat(ag.log_softmax(model.pred_logits(e)), targets)
    l2 = l2_hat(q.log_probs(enc.masked, frozen=True), styles)

    real = [b for b, s in enumerate(masked) if s.recon_tokens is not None]
    allowed = [PAD] + list(range(4, model.config.vocab_size))
    recon_seqs, recon_targets, first_rows = [], [], []
    if real:
        other = np.array([
            (styles[b] + 1 + rng.integers(n_styles - 1)) % n_styles if n_styles > 1 else styles[b]
            for b in real
        ])
        with ag.no_grad():
            sub = type(enc)(enc.contents[np.array(real)], enc.key_mask[real], enc.mask_pos[real])
            probs = ag.softmax(model.pred_logits(model.fuse_batch(other, sub)).data)
        for row, b in enumerate(real):
            sample = masked[b]
            cands = [sample.target] + topk_ids(probs[row], top_k, allowed)
            first_rows.append(len(recon_seqs))
            recon_seqs.extend(reconstruction_inputs(sample, cands))
            recon_targets.extend([sample.target] * len(cands))
    parts = {"l1": l1, "l2": l2}
    if recon_seqs:
        enc_r = model.encode_batch(recon_seqs)
        logp_r = ag.log_softmax(model.recon_logits(enc_r.masked))
        parts["recon"] = recon_nll(logp_r, recon_targets)
        if len(first_rows) >= 2:
            ident = logp_r[np.array(first_rows)]
            parts["l3"] = l3_hat(ident, [recon_targets[r] for r in first_rows])
    else:
        parts["recon"] = Tensor(0.0)
    if gaps:
        enc_g = model.encode_batch([g.tokens for g in gaps])
        e_g = model.fuse_batch([g.style for g in gaps], enc_g)
        parts["insert"] = insert_loss(model.insert_logits(e_g), [g.label for g in gaps])
    else:
        parts["insert"] = Tensor(0.0)
    return total_loss(parts, weights)

"""Alternating optimisation (Q classifier vs. main model), AdamW, checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import serialize
from .corpus import (
    MaskPolicy,
    batch_by_length,
    make_gap_sample,
    make_masked_sample,
    make_null_sample,
    style_counts,
)
from .model import RLM, ModelConfig, Vocab
from .objectives import LossWeights, QClassifier, compute_losses, q_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-5
    q_lr: float | None = None
    batch_size: int = 16
    steps: int = 1000
    weight_decay: float = 0.01
    beta: float = 1.0
    w_recon: float = 1.0
    w_insert: float = 1.0
    w_l3: float = 0.0
    top_k: int = 5
    seed: int = 0
    eval_interval: int = 0
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    salience_threshold: float = 2.0
    background_rate: float = 0.5
    null_rate: float = 0.15
    max_gap: int = 3
    gap_single_rate: float | None = None
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (CLUB needs two samples)")
        if self.lr < 0 or (self.q_lr is not None and self.q_lr < 0):
            raise ValueError("learning rates must be non-negative")
        if self.gap_single_rate is not None and not 0.0 <= self.gap_single_rate <= 1.0:
            raise ValueError("gap_single_rate must lie in [0, 1]")
        if self.steps < 0 or self.top_k < 1:
            raise ValueError("steps must be >= 0 and top_k >= 1")

    @property
    def weights(self):
        return LossWeights(self.beta, self.w_recon, self.w_insert, self.w_l3)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self):
        return asdict(self)


class AdamW:
    """Adam with decoupled weight decay: w <- w(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, params, lr, weight_decay=0.01, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k in sorted(self.params):
            p = self.params[k]
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            p.data = p.data * (1.0 - self.lr * self.wd) - self.lr * update


# data schedule -------------------------------------------------------------------


class DataStream:
    """Deterministic batches: epoch ``e`` is a pure function of (seed, e)."""

    def __init__(self, corpus, cfg: TrainConfig):
        self.cfg = cfg
        self.vocab = corpus.vocab()
        self.n_styles = len(corpus.styles)
        self.sentences = [(self.vocab.encode(t), corpus.style_id(s)) for t, s in corpus.train]
        self.marker_policy = MaskPolicy.from_counts(style_counts(corpus.train), cfg.salience_threshold)
        self.any_policy = MaskPolicy.any()
        self.long_enough = [j for j, (ids, _) in enumerate(self.sentences) if len(ids) > cfg.max_gap]
        if len(self.long_enough) < cfg.batch_size:
            raise TrainingError("too few sentences longer than max_gap to fill a gap batch")
        self.skipped = 0
        self._epoch_cache = {}
        self._epoch_len = {}

    def epoch(self, e):
        if e not in self._epoch_cache:
            self._epoch_cache = {e: self._build_epoch(e)}
            self._epoch_len[e] = len(self._epoch_cache[e])
        return self._epoch_cache[e]

    def _len(self, e):
        return self._epoch_len[e] if e in self._epoch_len else len(self.epoch(e))

    def _build_epoch(self, e):
        rng = np.random.default_rng([self.cfg.seed, e, 0])
        samples, skipped = [], 0
        for ids, style in self.sentences:
            r = rng.random()
            if r < self.cfg.null_rate:
                samples.append(make_null_sample(ids, style, rng))
                continue
            policy = self.any_policy if r < self.cfg.null_rate + self.cfg.background_rate else self.marker_policy
            sample = make_masked_sample(ids, style, rng, policy, self.vocab)
            if sample is None:
                skipped += 1
                continue
            samples.append(sample)
        self.skipped = skipped
        batches = batch_by_length(samples, self.cfg.batch_size, np.random.default_rng([self.cfg.seed, e, 1]))
        return [b for b in batches if len(b) >= 2]

    def batch(self, step):
        """(masked batch, gap batch, per-step rng) for global step ``step``."""
        e, offset = 0, step
        while offset >= self._len(e):
            offset -= self._len(e)
            e += 1
        masked = self.epoch(e)[offset]
        rng = np.random.default_rng([self.cfg.seed, step, 2])
        long_enough = self.long_enough
        picks = rng.choice(len(long_enough), size=self.cfg.batch_size, replace=False)
        gaps = [
            make_gap_sample(self.sentences[long_enough[j]][0], self.sentences[long_enough[j]][1], rng,
                            self.cfg.max_gap, self.cfg.gap_single_rate)
            for j in picks
        ]
        return masked, gaps, rng


# steps ---------------------------------------------------------------------------


def _check_finite(value, step, what):
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {what} at step {step}: {value}")


def q_step(model, q, masked, q_opt, step=0):
    """One ascent step on the Q log-likelihood; content embeddings are detached."""
    with ag.no_grad():
        c = model.encode_batch([s.tokens for s in masked]).masked.detach()
    q_opt.zero_grad()
    ll = q_loss(q.log_probs(c), [s.style for s in masked])
    _check_finite(float(ll.data), step, "q_loss")
    (-ll).backward()
    q_opt.step()
    return float(ll.data)


def main_step(model, q, masked, gaps, cfg: TrainConfig, opt, rng, n_styles, step=0):
    """One AdamW step on the total loss; Q is held fixed."""
    opt.zero_grad()
    for p in q.params.values():
        p.grad = None
    total, breakdown = compute_losses(model, q, masked, gaps, cfg.weights, cfg.top_k, rng, n_styles)
    if not math.isfinite(breakdown.total):
        raise TrainingError(f"non-finite loss at step {step}: {breakdown.to_record()}")
    total.backward()
    opt.step()
    return breakdown


# checkpoints -----------------------------------------------------------------------


@dataclass
class Checkpoint:
    train_config: TrainConfig
    model_config: ModelConfig
    vocab_words: list
    styles: list
    step: int
    model: RLM
    q: QClassifier
    opt: AdamW
    q_opt: AdamW

    def vocab(self):
        return Vocab(self.vocab_words)

    def to_bytes(self):
        meta = {
            "kind": "rlm-checkpoint",
            "train_config": self.train_config.to_dict(),
            "model_config": self.model_config.to_dict(),
            "vocab": self.vocab_words,
            "styles": self.styles,
            "step": self.step,
            "opt_t": self.opt.t,
            "q_opt_t": self.q_opt.t,
        }
        tensors = {}
        for prefix, params in (("model/", self.model.params), ("q/", self.q.params)):
            for k, p in params.items():
                tensors[prefix + k] = p.data
        for prefix, opt in (("opt", self.opt), ("qopt", self.q_opt)):
            for k in opt.m:
                tensors[f"{prefix}.m/{k}"] = opt.m[k]
                tensors[f"{prefix}.v/{k}"] = opt.v[k]
        return serialize.dumps(meta, tensors)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob):
        meta, tensors = serialize.loads(blob)
        if meta.get("kind") != "rlm-checkpoint":
            raise serialize.CheckpointError("file is not a training checkpoint")
        tcfg = TrainConfig.from_dict(meta["train_config"])
        mcfg = ModelConfig(**meta["model_config"])
        if mcfg.vocab_size != len(meta["vocab"]) + 4:
            raise serialize.CheckpointError("vocab size in config does not match stored vocabulary")
        state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
        try:
            model = RLM.from_state(mcfg, state)
        except ValueError as exc:
            raise serialize.CheckpointError(str(exc)) from None
        qstate = {k[len("q/"):]: v for k, v in tensors.items() if k.startswith("q/")}
        expected_q = {"q.w": (mcfg.d, mcfg.n_styles), "q.b": (mcfg.n_styles,)}
        for k, shape in expected_q.items():
            if k not in qstate or qstate[k].shape != shape:
                raise serialize.CheckpointError(f"Q parameter {k} missing or misshapen")
        q = QClassifier(mcfg.d, mcfg.n_styles, params={k: ag.Tensor(v, requires_grad=True) for k, v in qstate.items()})
        opt, q_opt = _optimizers(model, q, tcfg)
        for prefix, o, t in (("opt", opt, meta["opt_t"]), ("qopt", q_opt, meta["q_opt_t"])):
            o.t = t
            for k in o.m:
                o.m[k] = tensors[f"{prefix}.m/{k}"]
                o.v[k] = tensors[f"{prefix}.v/{k}"]
        return cls(tcfg, mcfg, meta["vocab"], meta["styles"], meta["step"], model, q, opt, q_opt)

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def _optimizers(model, q, cfg):
    opt = AdamW(model.params, cfg.lr, cfg.weight_decay, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps)
    q_lr = cfg.lr if cfg.q_lr is None else cfg.q_lr
    q_opt = AdamW(q.params, q_lr, cfg.weight_decay, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps)
    return opt, q_opt


def init_checkpoint(cfg: TrainConfig, corpus):
    vocab = corpus.vocab()
    mcfg = ModelConfig(vocab_size=len(vocab), n_styles=len(corpus.styles), seed=cfg.seed, **cfg.model)
    model = RLM(mcfg)
    q = QClassifier(mcfg.d, mcfg.n_styles, seed=cfg.seed)
    opt, q_opt = _optimizers(model, q, cfg)
    return Checkpoint(cfg, mcfg, corpus.vocab_words, list(corpus.styles), 0, model, q, opt, q_opt)


def run_training(cfg: TrainConfig, corpus, out_dir=None, resume=None, stop_at=None):
    """Alternate q_step / main_step until ``cfg.steps``.

    Returns (checkpoint, metrics records).  With ``out_dir`` the run writes
    ``metrics.jsonl``, a checkpoint every ``eval_interval`` steps and
    ``final.rlm``.  ``resume`` continues from a checkpoint; ``stop_at`` halts
    early (used to simulate interruption).
    """
    ckpt = resume if resume is not None else init_checkpoint(cfg, corpus)
    stream = DataStream(corpus, cfg)
    n_styles = len(corpus.styles)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records = []
    end = cfg.steps if stop_at is None else min(cfg.steps, stop_at)
    metrics_fh = open(out / "metrics.jsonl", "a" if resume else "w", encoding="utf-8") if out else None
    try:
        for step in range(ckpt.step, end):
            masked, gaps, rng = stream.batch(step)
            ql = q_step(ckpt.model, ckpt.q, masked, ckpt.q_opt, step)
            bd = main_step(ckpt.model, ckpt.q, masked, gaps, cfg, ckpt.opt, rng, n_styles, step)
            ckpt.step = step + 1
            rec = {"step": step, **bd.to_record(), "q_loss": ql}
            records.append(rec)
            if metrics_fh:
                metrics_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if step % 200 == 0:
                log.info("step %d total %.4f l1 %.4f l2 %.4f recon %.4f insert %.4f",
                         step, bd.total, bd.l1, bd.l2, bd.recon, bd.insert)
            if out and cfg.eval_interval and ckpt.step % cfg.eval_interval == 0:
                ckpt.save(out / f"step{ckpt.step:06d}.rlm")
    finally:
        if metrics_fh:
            metrics_fh.close()
    if out is not None and ckpt.step == cfg.steps:
        ckpt.save(out / "final.rlm")
    return ckpt, records

"""The replacing language model: MLM encoder, style table, fusion block, three heads.

Inputs are token-id lists containing exactly one ``[MASK]``; the encoder wraps
them as ``[BOS] ... [EOS]``.  Every forward path is batched (padded with
``[PAD]`` and an additive key mask); single-sequence helpers simply call the
batched code with a batch of one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

PAD, MASK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("[PAD]", "[MASK]", "[BOS]", "[EOS]")

# H_insert output order
INSERT, STOP = 0, 1

_NEG = -1e9


class Vocab:
    """Closed word vocabulary with the four reserved ids at 0..3."""

    def __init__(self, words):
        words = [w for w in words if w not in SPECIALS]
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        self.itos = list(SPECIALS) + list(words)
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, word):
        return word in self.stoi

    @property
    def word_ids(self):
        return range(len(SPECIALS), len(self.itos))

    @property
    def n_words(self):
        return len(self.itos) - len(SPECIALS)

    def encode(self, tokens):
        try:
            return [self.stoi[t] for t in tokens]
        except KeyError as exc:
            raise KeyError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def to_list(self):
        return self.itos[len(SPECIALS):]


@dataclass
class ModelConfig:
    vocab_size: int
    n_styles: int = 2
    d: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 256
    max_len: int = 32
    init_std: float = 0.02
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError("d must be divisible by n_heads")
        if self.vocab_size <= len(SPECIALS):
            raise ValueError("vocabulary has no words")

    def to_dict(self):
        return asdict(self)


def _param_shapes(cfg: ModelConfig):
    d, V = cfg.d, cfg.vocab_size
    shapes = {
        "tok_emb": (V, d),
        "pos_emb": (cfg.max_len, d),
        "emb_ln.g": (d,),
        "emb_ln.b": (d,),
    }
    for layer in range(cfg.n_layers):
        p = f"enc{layer}."
        for m in ("q", "k", "v", "o"):
            shapes[p + f"w{m}"] = (d, d)
            shapes[p + f"b{m}"] = (d,)
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "w1": (d, cfg.d_ff), p + "b1": (cfg.d_ff,),
            p + "w2": (cfg.d_ff, d), p + "b2": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
        })
    for block in ("content", "fuse"):
        for m in ("q", "k", "v", "o"):
            shapes[f"{block}.w{m}"] = (d, d)
            shapes[f"{block}.b{m}"] = (d,)
        shapes[f"{block}.ln.g"] = (d,)
        shapes[f"{block}.ln.b"] = (d,)
    shapes.update({
        "style_emb": (cfg.n_styles, d),
        "fuse.wp": (2 * d, d),
        "fuse.bp": (d,),
        "pred.w": (d, V),
        "pred.b": (V,),
        "recon.w": (d, V),
        "recon.b": (V,),
        "insert.w": (d, 2),
        "insert.b": (2,),
    })
    return shapes


def init_params(cfg: ModelConfig):
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith(".g"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, cfg.init_std, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def _split_heads(x, n_heads):
    B, L, d = x.shape
    return ag.transpose(x.reshape(B, L, n_heads, d // n_heads), (0, 2, 1, 3))


def _merge_heads(x):
    B, h, L, dh = x.shape
    return ag.transpose(x, (0, 2, 1, 3)).reshape(B, L, h * dh)


@dataclass
class Encoded:
    """Batch of encoder outputs.

    contents: B x L x d content sequence; key_mask: additive B x 1 x L mask;
    mask_pos: index of the [MASK] slot in each (wrapped) row.
    """

    contents: Tensor
    key_mask: np.ndarray
    mask_pos: np.ndarray

    @property
    def masked(self):
        return self.contents[np.arange(len(self.mask_pos)), self.mask_pos]


class RLM:
    def __init__(self, config: ModelConfig, params=None):
        self.config = config
        self.params = init_params(config) if params is None else params
        expected = _param_shapes(config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ValueError(f"parameter set mismatch: missing={missing} extra={extra}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(
                    f"parameter {name} has shape {self.params[name].shape}, config expects {shape}"
                )
        V = config.vocab_size
        self._pred_mask = np.zeros(V)
        self._pred_mask[[MASK, BOS, EOS]] = _NEG
        self._recon_mask = np.zeros(V)
        self._recon_mask[[PAD, MASK, BOS, EOS]] = _NEG

    @property
    def max_len(self):
        return self.config.max_len

    def __getitem__(self, name):
        return self.params[name]

    # input assembly -------------------------------------------------------------
    def _wrap(self, seqs):
        rows, pos = [], []
        for seq in seqs:
            seq = list(seq)
            if seq.count(MASK) != 1:
                raise ValueError("encoder input needs exactly one [MASK]")
            if any(not 0 <= t < self.config.vocab_size for t in seq):
                raise ValueError(f"token id outside vocabulary of {self.config.vocab_size}")
            row = [BOS] + seq + [EOS]
            if len(row) > self.config.max_len:
                raise ValueError(
                    f"sequence of {len(seq)} tokens (+2 boundary) exceeds max_len {self.config.max_len}"
                )
            rows.append(row)
            pos.append(seq.index(MASK) + 1)
        L = max(len(r) for r in rows)
        ids = np.full((len(rows), L), PAD, dtype=np.int64)
        key_mask = np.zeros((len(rows), 1, L))
        for b, row in enumerate(rows):
            ids[b, :len(row)] = row
            key_mask[b, 0, len(row):] = _NEG
        return ids, key_mask, np.asarray(pos, dtype=np.int64)

    # blocks ---------------------------------------------------------------------
    def _self_attention(self, prefix, x, key_mask, n_heads):
        p = self.params
        q = x @ p[prefix + "wq"] + p[prefix + "bq"]
        k = x @ p[prefix + "wk"] + p[prefix + "bk"]
        v = x @ p[prefix + "wv"] + p[prefix + "bv"]
        if n_heads == 1:
            out = ag.attention(q, k, v, key_mask)
        else:
            out = _merge_heads(ag.attention(
                _split_heads(q, n_heads), _split_heads(k, n_heads), _split_heads(v, n_heads),
                key_mask[:, None],
            ))
        return out @ p[prefix + "wo"] + p[prefix + "bo"]

    def encode_batch(self, seqs) -> Encoded:
        """Encoder plus content-extraction block over every position."""
        p, cfg = self.params, self.config
        ids, key_mask, pos = self._wrap(seqs)
        L = ids.shape[1]
        x = ag.embedding(p["tok_emb"], ids) + p["pos_emb"][:L]
        x = ag.layer_norm(x, p["emb_ln.g"], p["emb_ln.b"], cfg.ln_eps)
        for layer in range(cfg.n_layers):
            pre = f"enc{layer}."
            x = ag.layer_norm(
                x + self._self_attention(pre, x, key_mask, cfg.n_heads),
                p[pre + "ln1.g"], p[pre + "ln1.b"], cfg.ln_eps,
            )
            ff = ag.gelu(x @ p[pre + "w1"] + p[pre + "b1"]) @ p[pre + "w2"] + p[pre + "b2"]
            x = ag.layer_norm(x + ff, p[pre + "ln2.g"], p[pre + "ln2.b"], cfg.ln_eps)
        c = ag.layer_norm(
            x + self._self_attention("content.", x, key_mask, 1),
            p["content.ln.g"], p["content.ln.b"], cfg.ln_eps,
        )
        return Encoded(c, key_mask, pos)

    def fuse_batch(self, styles, enc: Encoded):
        """e_i = LN(c_i + Attn_i([C; s] W_p)): style concatenated to every content vector."""
        p, cfg = self.params, self.config
        C = enc.contents
        B, L, d = C.shape
        styles = np.asarray(styles, dtype=np.int64).reshape(B)
        s = ag.embedding(p["style_emb"], styles).reshape(B, 1, d)
        s_full = s + Tensor(np.zeros((B, L, d)))
        z = ag.concat([C, s_full], axis=-1) @ p["fuse.wp"] + p["fuse.bp"]
        rows = np.arange(B)
        z_i = z[rows, enc.mask_pos].reshape(B, 1, d)
        q = z_i @ p["fuse.wq"] + p["fuse.bq"]
        k = z @ p["fuse.wk"] + p["fuse.bk"]
        v = z @ p["fuse.wv"] + p["fuse.bv"]
        a = (ag.attention(q, k, v, enc.key_mask) @ p["fuse.wo"] + p["fuse.bo"]).reshape(B, d)
        return ag.layer_norm(enc.masked + a, p["fuse.ln.g"], p["fuse.ln.b"], cfg.ln_eps)

    # heads ----------------------------------------------------------------------
    def pred_logits(self, e):
        return e @ self.params["pred.w"] + self.params["pred.b"] + self._pred_mask

    def recon_logits(self, c_prime):
        return c_prime @ self.params["recon.w"] + self.params["recon.b"] + self._recon_mask

    def insert_logits(self, e):
        return e @ self.params["insert.w"] + self.params["insert.b"]

    # single-sample operations --------------------------------------------------
    def content_sequence(self, prefix, suffix):
        """Content vectors for (prefix, [MASK], suffix) and the [MASK] index within them."""
        with ag.no_grad():
            enc = self.encode_batch([list(prefix) + [MASK] + list(suffix)])
        return enc.contents.data[0, :len(prefix) + len(suffix) + 3], int(enc.mask_pos[0])

    def encode_content(self, prefix, suffix):
        contents, i = self.content_sequence(prefix, suffix)
        return contents[i]

    def encode_reconstruction(self, span, x_prefix, x_suffix):
        return self.encode_content(list(span) + list(x_prefix), x_suffix)

    def fuse(self, style, contents, i):
        contents = np.asarray(contents, dtype=np.float64)
        if contents.ndim != 2 or len(contents) == 0:
            raise ValueError("fuse needs a non-empty content sequence")
        if not 0 <= i < len(contents):
            raise IndexError(f"position {i} outside content sequence of length {len(contents)}")
        enc = Encoded(Tensor(contents[None]), np.zeros((1, 1, len(contents))), np.array([i]))
        with ag.no_grad():
            return self.fuse_batch([style], enc).data[0]

    def predict_token(self, e):
        with ag.no_grad():
            return ag.softmax(self.pred_logits(Tensor(e)).data)

    def reconstruct_token(self, c_prime):
        with ag.no_grad():
            return ag.softmax(self.recon_logits(Tensor(c_prime)).data)

    def insert_decision(self, e):
        with ag.no_grad():
            return ag.softmax(self.insert_logits(Tensor(e)).data)

    # scorer interface (shared with StubModel) -------------------------------
    def prediction(self, seq, style):
        """Prediction and insertion distributions at the single [MASK] of ``seq``."""
        with ag.no_grad():
            enc = self.encode_batch([seq])
            e = self.fuse_batch([style], enc)
            pred = ag.softmax(self.pred_logits(e).data[0])
            ins = ag.softmax(self.insert_logits(e).data[0])
        return pred, ins

    def reconstruction(self, seq):
        """Reconstruction distribution at the single [MASK] of ``seq``."""
        return self.reconstruction_batch([seq])[0]

    def reconstruction_batch(self, seqs):
        with ag.no_grad():
            enc = self.encode_batch(seqs)
            return ag.softmax(self.recon_logits(enc.masked).data)

    # persistence helpers ----------------------------------------------------------
    def state_dict(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    @classmethod
    def from_state(cls, config: ModelConfig, state):
        return cls(config, {k: Tensor(v, requires_grad=True) for k, v in state.items()})

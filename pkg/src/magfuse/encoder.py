"""Small post-norm transformer encoder with MAG injection points.

Instances in a batch are right-padded to a common width W and packed into one
``(B * W) x d_model`` matrix. Attention logits are kept as a ``(B * W) x W``
matrix (each query row against the keys of its own instance), with padded keys
masked out.
"""

from dataclasses import asdict, dataclass

import numpy as np

from magfuse import mag as M
from magfuse import tensor as T
from magfuse.errors import ConfigError, ShapeError

VARIANTS = ("absolute", "relative_bias")


@dataclass
class EncoderConfig:
    vocab_size: int = 64
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    max_seq_len: int = 64
    variant: str = "absolute"
    dropout_p: float = 0.5

    def validate(self):
        for name in ("vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"encoder.{name} must be a positive integer")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"encoder.variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("encoder.dropout_p must be in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)


class Layout:
    """Packed batch geometry: padding mask, attention mask, relative offsets, pooling."""

    def __init__(self, mask, max_seq_len):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[None, :]
        if not mask.any(axis=1).all():
            raise ShapeError("every instance needs at least one real (unmasked) position")
        self.mask = mask
        B, L = mask.shape
        if L > max_seq_len:
            raise ShapeError(f"sequence length {L} exceeds max_seq_len {max_seq_len}")
        self.n_instances, self.width = B, L
        pos = np.tile(np.arange(L), B)
        self.positions = pos
        # row b*L+i, column j: may query i of instance b attend to key j?
        self.attn_mask = np.repeat(mask, L, axis=0)
        rel = np.clip(pos[:, None] - np.arange(L)[None, :], -max_seq_len, max_seq_len)
        self.rel_index = rel + max_seq_len
        counts = mask.sum(axis=1)
        pool = np.zeros((B, B * L))
        for b in range(B):
            pool[b, b * L:(b + 1) * L] = mask[b] / counts[b]
        self.pool = pool

    @property
    def n_rows(self):
        return self.n_instances * self.width


def _dense(rng, fan_in, fan_out):
    return T.Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)), requires_grad=True)


def _zeros(*shape):
    return T.Tensor(np.zeros(shape), requires_grad=True)


def _ones(n):
    return T.Tensor(np.ones(n), requires_grad=True)


def init_encoder_params(config, rng):
    d = config.d_model
    p = {"tok_emb": T.Tensor(rng.normal(0.0, 1.0, (config.vocab_size, d)), requires_grad=True)}
    if config.variant == "absolute":
        p["pos_emb"] = T.Tensor(rng.normal(0.0, 1.0, (config.max_seq_len, d)), requires_grad=True)
    for l in range(config.n_layers):
        pre = f"layer{l}."
        for name in ("W_q", "W_k", "W_v", "W_o"):
            p[pre + name] = _dense(rng, d, d)
        for name in ("b_q", "b_k", "b_v", "b_o"):
            p[pre + name] = _zeros(d)
        if config.variant == "relative_bias":
            for h in range(config.n_heads):
                p[pre + f"rel_bias{h}"] = _zeros(2 * config.max_seq_len + 1)
        p[pre + "ln1_gain"], p[pre + "ln1_bias"] = _ones(d), _zeros(d)
        p[pre + "W_ff1"], p[pre + "b_ff1"] = _dense(rng, d, config.d_ff), _zeros(config.d_ff)
        p[pre + "W_ff2"], p[pre + "b_ff2"] = _dense(rng, config.d_ff, d), _zeros(d)
        p[pre + "ln2_gain"], p[pre + "ln2_bias"] = _ones(d), _zeros(d)
    return p


def embed(token_ids, params, config):
    """Token (plus absolute position) embeddings for packed ids -> [N x d_model]."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.shape[1] > config.max_seq_len:
        raise ShapeError(f"sequence length {ids.shape[1]} exceeds max_seq_len {config.max_seq_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ShapeError(f"token id out of range [0, {config.vocab_size})")
    x = T.take_rows(params["tok_emb"], ids.reshape(-1))
    if config.variant == "absolute":
        pos = np.tile(np.arange(ids.shape[1]), ids.shape[0])
        x = x + T.take_rows(params["pos_emb"], pos)
    return x


def attention(x, layout, params, layer, config, return_weights=False):
    """Multi-head scaled dot-product self-attention over packed rows."""
    pre = f"layer{layer}."
    d, nh = config.d_model, config.n_heads
    dh = d // nh
    if x.shape != (layout.n_rows, d):
        raise ShapeError(f"attention input {x.shape} does not match layout ({layout.n_rows}, {d})")
    q = x @ params[pre + "W_q"] + params[pre + "b_q"]
    k = x @ params[pre + "W_k"] + params[pre + "b_k"]
    v = x @ params[pre + "W_v"] + params[pre + "b_v"]
    heads, weights = [], []
    for h in range(nh):
        qh = T.slice_cols(q, h * dh, (h + 1) * dh)
        kh = T.slice_cols(k, h * dh, (h + 1) * dh)
        vh = T.slice_cols(v, h * dh, (h + 1) * dh)
        logits = T.scale(T.block_scores(qh, kh, layout.width), 1.0 / np.sqrt(dh))
        if config.variant == "relative_bias":
            logits = logits + T.gather(params[pre + f"rel_bias{h}"], layout.rel_index)
        w = T.softmax_rows(logits, layout.attn_mask)
        weights.append(w)
        heads.append(T.block_mix(w, vh, layout.width))
    out = T.concat_cols(heads) @ params[pre + "W_o"] + params[pre + "b_o"]
    if return_weights:
        return out, weights
    return out


def encoder_layer(x, layout, params, layer, config, training, rng):
    pre = f"layer{layer}."
    p = config.dropout_p
    att = T.dropout(attention(x, layout, params, layer, config), p, rng, training)
    x = T.layer_norm(x + att, params[pre + "ln1_gain"], params[pre + "ln1_bias"], M.LN_EPS)
    ff = T.relu(x @ params[pre + "W_ff1"] + params[pre + "b_ff1"]) @ params[pre + "W_ff2"]
    ff = T.dropout(ff + params[pre + "b_ff2"], p, rng, training)
    return T.layer_norm(x + ff, params[pre + "ln2_gain"], params[pre + "ln2_bias"], M.LN_EPS)


def encoder_forward(x, visual, acoustic, layout, params, config, mag_config,
                    training=False, rng=None, mag_enabled=True):
    """Run all layers, applying MAG to the hidden state entering each configured layer."""
    placements = set(int(l) for l in mag_config.apply_at_layers)
    for l in range(config.n_layers):
        if l in placements:
            x = M.mag_forward(x, visual, acoustic, params, mag_config, training, rng,
                              prefix=f"mag{l}.", enabled=mag_enabled)
        x = encoder_layer(x, layout, params, l, config, training, rng)
    return x


def pool_and_head(encoded, layout, params):
    """Mean-pool real positions per instance, then affine map to one intensity each."""
    pooled = T.Tensor(layout.pool) @ encoded
    return pooled @ params["head_W"] + params["head_b"], pooled

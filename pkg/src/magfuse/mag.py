"""Multimodal Adaptation Gate.

Visual and acoustic features are turned into a gated displacement that is
added to each lexical hidden vector, with its norm capped relative to the
lexical vector::

    g_v = relu([h ; v] W_gv + b_gv)          g_a = relu([h ; a] W_ga + b_ga)
    H   = g_v * (v W_v) + g_a * (a W_a) + b_H
    alpha = min(beta * |h| / (|H| + eps), 1)
    out = dropout(layer_norm(h + alpha * H))

With ``lexical_in_gate`` off, ``h`` is replaced by zeros inside the gates.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from magfuse import tensor as T
from magfuse.errors import ConfigError, ShapeError

LN_EPS = 1e-5


@dataclass
class MagConfig:
    d_model: int = 32
    d_visual: int = 4
    d_acoustic: int = 4
    beta: float = 1.0
    eps: float = 1e-6
    dropout_p: float = 0.5
    apply_at_layers: list = field(default_factory=lambda: [0])
    lexical_in_gate: bool = True

    def validate(self, n_layers=None):
        for name in ("d_model", "d_visual", "d_acoustic"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"mag.{name} must be positive")
        if self.beta < 0:
            raise ConfigError("mag.beta must be >= 0")
        if self.eps <= 0:
            raise ConfigError("mag.eps must be > 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("mag.dropout_p must be in [0, 1)")
        layers = list(self.apply_at_layers)
        if len(set(layers)) != len(layers):
            raise ConfigError("mag.apply_at_layers has duplicates")
        if n_layers is not None and any(not 0 <= l < n_layers for l in layers):
            raise ConfigError(f"mag.apply_at_layers {layers} outside [0, {n_layers})")
        return self

    def to_dict(self):
        d = asdict(self)
        d["apply_at_layers"] = sorted(int(l) for l in self.apply_at_layers)
        return d


def init_mag_weights(config, rng, prefix=""):
    d, dv, da = config.d_model, config.d_visual, config.d_acoustic

    def w(fan_in, fan_out):
        return T.Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)), requires_grad=True)

    def z(n):
        return T.Tensor(np.zeros(n), requires_grad=True)

    return {
        prefix + "W_gv": w(d + dv, d),
        prefix + "b_gv": z(d),
        prefix + "W_ga": w(d + da, d),
        prefix + "b_ga": z(d),
        prefix + "W_v": w(dv, d),
        prefix + "W_a": w(da, d),
        prefix + "b_H": z(d),
        prefix + "ln_gain": T.Tensor(np.ones(d), requires_grad=True),
        prefix + "ln_bias": z(d),
    }


def _check_inputs(h, v, a, config):
    if not (h.shape[0] == v.shape[0] == a.shape[0]):
        raise ShapeError(
            f"modality lengths differ: lexical {h.shape[0]}, visual {v.shape[0]}, acoustic {a.shape[0]}"
        )
    if h.shape[1] != config.d_model:
        raise ShapeError(f"lexical dim {h.shape[1]} != d_model {config.d_model}")
    if v.shape[1] != config.d_visual:
        raise ShapeError(f"visual dim {v.shape[1]} != d_visual {config.d_visual}")
    if a.shape[1] != config.d_acoustic:
        raise ShapeError(f"acoustic dim {a.shape[1]} != d_acoustic {config.d_acoustic}")


def mag_gates(h, v, a, weights, config, prefix=""):
    """Elementwise gate vectors (g_v, g_a), each [L x d_model]."""
    _check_inputs(h, v, a, config)
    lex = h if config.lexical_in_gate else T.Tensor(np.zeros(h.shape))
    g_v = T.relu(T.concat_last(lex, v) @ weights[prefix + "W_gv"] + weights[prefix + "b_gv"])
    g_a = T.relu(T.concat_last(lex, a) @ weights[prefix + "W_ga"] + weights[prefix + "b_ga"])
    return g_v, g_a


def displacement(h, v, a, weights, config, prefix=""):
    g_v, g_a = mag_gates(h, v, a, weights, config, prefix)
    vis = g_v * (v @ weights[prefix + "W_v"])
    aco = g_a * (a @ weights[prefix + "W_a"])
    return vis + aco + weights[prefix + "b_H"]


def shift_cap(h, H, config):
    """Per-row alpha as a differentiable vector of length L."""
    ratio = T.div(T.scale(T.row_norms(h), config.beta), T.add_scalar(T.row_norms(H), config.eps))
    return T.minimum_const(ratio, 1.0)


def shift_magnitude(h_i, H_i, config):
    """alpha for a single position, on plain arrays."""
    nh = float(np.linalg.norm(np.asarray(h_i, dtype=np.float64)))
    nH = float(np.linalg.norm(np.asarray(H_i, dtype=np.float64)))
    return min(config.beta * nh / (nH + config.eps), 1.0)


def mag_forward(h, v, a, weights, config, training=False, rng=None, prefix="", enabled=True):
    """Shift ``h`` by the capped nonlexical displacement, then norm and dropout.

    ``enabled=False`` skips the shift entirely (the norm and dropout stay), so
    the result cannot depend on ``v`` or ``a``.
    """
    gain, bias = weights[prefix + "ln_gain"], weights[prefix + "ln_bias"]
    if enabled:
        H = displacement(h, v, a, weights, config, prefix)
        alpha = shift_cap(h, H, config)
        shifted = h + T.scale_rows(H, alpha)
    else:
        shifted = h
    out = T.layer_norm(shifted, gain, bias, LN_EPS)
    return T.dropout(out, config.dropout_p, rng, training)

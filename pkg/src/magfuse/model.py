"""Sentiment-intensity regressor: embeddings -> encoder with MAG -> pooled head."""

from dataclasses import dataclass, field

import numpy as np

from magfuse import encoder as E
from magfuse import mag as M
from magfuse import tensor as T
from magfuse.data import EMOTIONS, PAD_ID, make_rng
from magfuse.errors import ConfigError, ShapeError


@dataclass
class ModelConfig:
    encoder: E.EncoderConfig = field(default_factory=E.EncoderConfig)
    mag: M.MagConfig = field(default_factory=M.MagConfig)
    mag_enabled: bool = True
    emotion_head: bool = False

    def validate(self):
        self.encoder.validate()
        self.mag.validate(self.encoder.n_layers)
        if self.mag.d_model != self.encoder.d_model:
            raise ConfigError(
                f"mag.d_model {self.mag.d_model} != encoder.d_model {self.encoder.d_model}")
        return self

    def to_dict(self):
        return {
            "encoder": self.encoder.to_dict(),
            "mag": self.mag.to_dict(),
            "mag_enabled": self.mag_enabled,
            "emotion_head": self.emotion_head,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {"encoder", "mag", "mag_enabled", "emotion_head"}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        try:
            enc = E.EncoderConfig(**d.get("encoder", {}))
            mag = M.MagConfig(**d.get("mag", {}))
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None
        return cls(enc, mag, bool(d.get("mag_enabled", True)), bool(d.get("emotion_head", False)))


class Batch:
    """Padded, packed tensors for a list of instances."""

    def __init__(self, instances, vocab, config, zero_nonlexical=False):
        if not instances:
            raise ShapeError("empty batch")
        dv, da = config.mag.d_visual, config.mag.d_acoustic
        width = max(len(inst) for inst in instances)
        B = len(instances)
        ids = np.full((B, width), PAD_ID, dtype=np.int64)
        mask = np.zeros((B, width), dtype=bool)
        vis = np.zeros((B, width, dv))
        aco = np.zeros((B, width, da))
        for b, inst in enumerate(instances):
            n = len(inst)
            if inst.visual.shape[1] != dv or inst.acoustic.shape[1] != da:
                raise ShapeError(
                    f"instance {inst.id}: feature dims ({inst.visual.shape[1]}, "
                    f"{inst.acoustic.shape[1]}) do not match model ({dv}, {da})")
            ids[b, :n] = vocab.encode(inst.words)
            mask[b, :n] = True
            if not zero_nonlexical:
                vis[b, :n] = inst.visual
                aco[b, :n] = inst.acoustic
        self.ids = ids
        self.layout = E.Layout(mask, config.encoder.max_seq_len)
        self.visual = T.Tensor(vis.reshape(B * width, dv))
        self.acoustic = T.Tensor(aco.reshape(B * width, da))
        self.labels = np.array(
            [np.nan if inst.label is None else inst.label for inst in instances])
        self.emotions = None
        if all(inst.emotions is not None for inst in instances):
            self.emotions = np.array([inst.emotions for inst in instances])


class MagFuseModel:
    def __init__(self, config, vocab, seed=0):
        self.config = config.validate()
        if config.encoder.vocab_size != len(vocab):
            raise ConfigError(
                f"encoder.vocab_size {config.encoder.vocab_size} != vocabulary size {len(vocab)}")
        self.vocab = vocab
        rng = make_rng(seed)
        self.params = E.init_encoder_params(config.encoder, rng)
        for l in sorted(config.mag.apply_at_layers):
            self.params.update(M.init_mag_weights(config.mag, rng, prefix=f"mag{l}."))
        d = config.encoder.d_model
        self.params["head_W"] = T.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (d, 1)), requires_grad=True)
        self.params["head_b"] = T.Tensor(np.zeros(1), requires_grad=True)
        if config.emotion_head:
            self.params["emo_W"] = T.Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(d), (d, len(EMOTIONS))), requires_grad=True)
            self.params["emo_b"] = T.Tensor(np.zeros(len(EMOTIONS)), requires_grad=True)

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def batch(self, instances, zero_nonlexical=False):
        return Batch(instances, self.vocab, self.config, zero_nonlexical)

    def forward(self, batch, training=False, rng=None):
        """Return (intensity [B], emotions [B x 6] or None) as graph tensors."""
        cfg = self.config
        if training and rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        x = E.embed(batch.ids, self.params, cfg.encoder)
        x = E.encoder_forward(x, batch.visual, batch.acoustic, batch.layout, self.params,
                              cfg.encoder, cfg.mag, training, rng, cfg.mag_enabled)
        pred, pooled = E.pool_and_head(x, batch.layout, self.params)
        emo = None
        if cfg.emotion_head:
            emo = T.softplus(pooled @ self.params["emo_W"] + self.params["emo_b"])
        return T.reshape(pred, (batch.layout.n_instances,)), emo

    def loss(self, batch, kind="mae", training=True, rng=None):
        pred, emo = self.forward(batch, training, rng)
        if np.isnan(batch.labels).any():
            raise ShapeError("loss needs labelled instances")
        err = pred - T.Tensor(batch.labels)
        total = T.mean_all(T.absolute(err) if kind == "mae" else T.square(err))
        if emo is not None and batch.emotions is not None:
            e_err = emo - T.Tensor(batch.emotions)
            total = total + T.mean_all(T.absolute(e_err) if kind == "mae" else T.square(e_err))
        return total

    def predict(self, instances, batch_size=16, zero_nonlexical=False, with_emotions=False):
        preds, emos = [], []
        for i in range(0, len(instances), batch_size):
            b = self.batch(instances[i:i + batch_size], zero_nonlexical)
            p, e = self.forward(b, training=False)
            preds.append(p.data.copy())
            if e is not None:
                emos.append(e.data.copy())
        pred = np.concatenate(preds) if preds else np.zeros(0)
        if with_emotions:
            return pred, (np.concatenate(emos) if emos else None)
        return pred

    def get_weights(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_weights(self, weights):
        for k, t in self.params.items():
            if k not in weights:
                raise ShapeError(f"missing weight for parameter {k!r}")
            w = np.asarray(weights[k], dtype=np.float64)
            if w.shape != t.shape:
                raise ShapeError(f"parameter {k!r}: expected shape {t.shape}, got {w.shape}")
            t.data = w.copy()
        extra = set(weights) - set(self.params)
        if extra:
            raise ShapeError(f"unexpected parameters: {sorted(extra)}")

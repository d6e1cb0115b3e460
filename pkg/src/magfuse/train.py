"""Adam, the training loop, run logs and checkpoints."""

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from magfuse import metrics as MX
from magfuse import tensor as T
from magfuse.data import Vocabulary, make_rng
from magfuse.errors import CheckpointError, ConfigError, MissingInputError, NumericError, ShapeError
from magfuse.model import MagFuseModel, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "magfuse-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 1e-5
    dropout_p: float = 0.5
    batch_size: int = 8
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "mae"
    eval_train: bool = True

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("train.dropout_p must be in [0, 1)")
        if self.loss not in ("mae", "mse"):
            raise ConfigError(f"train.loss must be 'mae' or 'mse', got {self.loss!r}")
        return self

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update, in place on the arrays in ``params``."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step: params, grads and state differ in length")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p)
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError(f"adam_step: shape mismatch at index {i}: {p.shape} vs {g.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p -= cfg.learning_rate * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + cfg.adam_eps)
    return params, state


# ---------------------------------------------------------------------------
# run log
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_mae: float
    val: dict
    wall_time_s: float


@dataclass
class RunLog:
    records: list = field(default_factory=list)

    def append(self, rec):
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("run log epochs must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def best_epoch(self):
        return min(self.records, key=lambda r: (r.val["mae"], r.epoch)).epoch

    def to_jsonl(self, timestamps=True):
        out = []
        for r in self.records:
            d = asdict(r)
            if not timestamps:
                d.pop("wall_time_s")
            out.append(json.dumps(d, sort_keys=True))
        return "\n".join(out) + "\n"

    def write(self, directory):
        directory = Path(directory)
        (directory / "runlog.jsonl").write_text(self.to_jsonl(), encoding="utf-8")
        cols = ["epoch", "train_loss", "train_mae", "val_accuracy", "val_f1", "val_mae",
                "val_corr", "wall_time_s"]
        with (directory / "runlog.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_mae), repr(r.val["accuracy"]),
                            repr(r.val["f1"]), repr(r.val["mae"]), repr(r.val["corr"]),
                            f"{r.wall_time_s:.3f}"])

    @classmethod
    def read_jsonl(cls, path):
        rl = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                rl.append(EpochRecord(**json.loads(line)))
        return rl


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def evaluate_model(model, corpus, zero_nonlexical=False, batch_size=16):
    preds, emos = model.predict(corpus.instances, batch_size, zero_nonlexical, with_emotions=True)
    labels = corpus.labels
    emo_labels = None
    if emos is not None and all(i.emotions is not None for i in corpus.instances):
        emo_labels = np.array([i.emotions for i in corpus.instances])
    else:
        emos = None
    return MX.evaluate(preds, labels, emos, emo_labels)


def train(model, train_corpus, val_corpus, cfg, zero_nonlexical=False, on_epoch=None):
    """Train ``model`` in place; return (best-val-MAE weights, RunLog).

    ``zero_nonlexical`` feeds zeros for the visual/acoustic streams everywhere
    (the text-only baseline).
    """
    cfg.validate()
    if not len(train_corpus) or not len(val_corpus):
        raise ConfigError("train and validation splits must be nonempty")
    mc = model.config.mag
    if (train_corpus.d_visual, train_corpus.d_acoustic) != (mc.d_visual, mc.d_acoustic):
        raise ShapeError(
            f"corpus dims (visual {train_corpus.d_visual}, acoustic {train_corpus.d_acoustic}) "
            f"do not match model (visual {mc.d_visual}, acoustic {mc.d_acoustic})")
    model.config.encoder.dropout_p = cfg.dropout_p
    model.config.mag.dropout_p = cfg.dropout_p

    rng = make_rng(cfg.seed)
    params = model.parameters()
    state = AdamState.zeros_like([p.data for p in params])
    runlog = RunLog()
    best_mae, best_weights = np.inf, model.get_weights()
    insts = train_corpus.instances
    n = len(insts)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            batch = model.batch([insts[i] for i in order[start:start + cfg.batch_size]],
                                zero_nonlexical)
            try:
                loss = model.loss(batch, cfg.loss, training=True, rng=rng)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            if not np.isfinite(loss.item()):
                raise NumericError(f"epoch {epoch}, batch {bi}: non-finite loss")
            T.zero_grads(params)
            loss.backward()
            adam_step([p.data for p in params], [p.grad for p in params], state, cfg)
            losses.append(loss.item())
        val = evaluate_model(model, val_corpus, zero_nonlexical)
        train_mae = float("nan")
        if cfg.eval_train:
            train_mae = MX.mae(model.predict(insts, zero_nonlexical=zero_nonlexical),
                               train_corpus.labels)
        rec = EpochRecord(epoch, float(np.mean(losses)), train_mae, val.to_dict(),
                          time.perf_counter() - t0)
        runlog.append(rec)
        log.info("epoch %d loss %.4f val_mae %.4f val_acc %.4f", epoch, rec.train_loss,
                 val.mae, val.accuracy)
        if val.mae < best_mae:
            best_mae, best_weights = val.mae, model.get_weights()
        if on_epoch is not None:
            on_epoch(rec)
    T.zero_grads(params)
    return best_weights, runlog


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(weights, config, path, vocab, extra=None):
    """Write ``manifest.json`` + ``weights.bin`` (float64 little-endian) into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = list(weights)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "params": [{"name": k, "shape": list(np.shape(weights[k]))} for k in names],
        "config": config.to_dict(),
        "vocab": vocab.to_list(),
    }
    if extra:
        manifest["extra"] = extra
    payload = b"".join(np.ascontiguousarray(weights[k], dtype="<f8").tobytes() for k in names)
    (path / "weights.bin").write_bytes(payload)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True),
                                        encoding="utf-8")
    return path


def load_checkpoint(path):
    """Return (weights dict, ModelConfig, Vocabulary)."""
    path = Path(path)
    mpath, wpath = path / "manifest.json", path / "weights.bin"
    if not mpath.is_file() or not wpath.is_file():
        raise MissingInputError(f"checkpoint directory {path} lacks manifest.json or weights.bin")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc.msg}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a magfuse checkpoint")
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unknown checkpoint format version {manifest.get('format_version')!r}")
    payload = wpath.read_bytes()
    sizes = [int(np.prod(p["shape"], dtype=np.int64)) for p in manifest["params"]]
    expected = 8 * sum(sizes)
    if len(payload) != expected:
        raise CheckpointError(
            f"corrupt checkpoint: payload is {len(payload)} bytes, manifest expects {expected}")
    flat = np.frombuffer(payload, dtype="<f8")
    weights, off = {}, 0
    for p, n in zip(manifest["params"], sizes):
        weights[p["name"]] = flat[off:off + n].astype(np.float64).reshape(p["shape"])
        off += n
    config = ModelConfig.from_dict(manifest["config"])
    vocab = Vocabulary.from_list(manifest["vocab"])
    return weights, config, vocab


def load_model(path, config=None):
    """Build a model from a checkpoint; ``config`` overrides the stored one."""
    weights, stored, vocab = load_checkpoint(path)
    model = MagFuseModel(config or stored, vocab)
    model.set_weights(weights)
    return model

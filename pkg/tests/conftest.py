import json
from pathlib import Path

import numpy as np
import pytest

from magfuse import data as D
from magfuse import model as Mo
from magfuse import train as TR


def numeric_grad(f, arr, step=1e-5):
    """Central finite differences of scalar f() w.r.t. every entry of arr (perturbed in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * step)
    return g


def rel_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < floor:
        return float(np.linalg.norm(a - n))
    return float(np.linalg.norm(a - n) / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return D.generate_synthetic(24, 3, D.GenConfig(min_len=3, max_len=6, sigma=0.1))


def tiny_config(vocab_size, d_visual=4, d_acoustic=4, **enc):
    cfg = Mo.ModelConfig()
    enc_defaults = dict(vocab_size=vocab_size, d_model=8, n_heads=2, n_layers=2, d_ff=16,
                        max_seq_len=8)
    enc_defaults.update(enc)
    for k, v in enc_defaults.items():
        setattr(cfg.encoder, k, v)
    cfg.mag.d_model = cfg.encoder.d_model
    cfg.mag.d_visual, cfg.mag.d_acoustic = d_visual, d_acoustic
    return cfg


RECIPE = Path(__file__).resolve().parents[1] / "recipes" / "toy.json"


def toy_train_config(**kw):
    """TrainConfig from the shipped toy recipe, with keyword overrides."""
    cfg = json.loads(RECIPE.read_text())["train"]
    cfg.update(kw)
    return TR.TrainConfig(**cfg)


def toy_model(corpus, vocab=None, seed=0, **model_kw):
    """Default-sized model fitted to a corpus' vocabulary and feature dims."""
    vocab = vocab or corpus.vocab
    cfg = Mo.ModelConfig()
    cfg.encoder.vocab_size = len(vocab)
    cfg.mag.d_model = cfg.encoder.d_model
    cfg.mag.d_visual, cfg.mag.d_acoustic = corpus.d_visual, corpus.d_acoustic
    for k, v in model_kw.items():
        setattr(cfg, k, v)
    return Mo.MagFuseModel(cfg, vocab, seed=seed)


@pytest.fixture(scope="session")
def stream_model():
    """A toy model trained on short equal-weight instances, used to score streams."""
    corpus = D.generate_synthetic(400, 0, D.GenConfig(sigma=0.1))
    train_c, val_c, _ = D.split(corpus, D.SplitSpec(0.8, 0.1, 0.1, seed=0))
    model = toy_model(train_c)
    best, _ = TR.train(model, train_c, val_c, toy_train_config(epochs=15, seed=0))
    model.set_weights(best)
    return model


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

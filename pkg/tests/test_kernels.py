import numpy as np
import pytest

from magfuse import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture(scope="module")
def both():
    return K.select(use_numba=False), K.select(use_numba=True)


def test_softmax_paths_agree(both, rng):
    np_k, nb_k = both
    x = rng.normal(scale=50, size=(7, 9))
    mask = rng.random((7, 9)) < 0.7
    mask[:, 0] = True
    for m in (None, mask):
        assert np.allclose(np_k["softmax_rows"](x, m), nb_k["softmax_rows"](x, m), atol=1e-14)
    y = np_k["softmax_rows"](x, mask)
    dy = rng.normal(size=y.shape)
    assert np.allclose(np_k["softmax_rows_bwd"](y, dy), nb_k["softmax_rows_bwd"](y, dy), atol=1e-13)


def test_layer_norm_paths_agree(both, rng):
    np_k, nb_k = both
    x, g, b = rng.normal(size=(6, 5)), rng.normal(size=5), rng.normal(size=5)
    outs_np = np_k["layer_norm"](x, g, b, 1e-5)
    outs_nb = nb_k["layer_norm"](x, g, b, 1e-5)
    for a, c in zip(outs_np, outs_nb):
        assert np.allclose(a, c, atol=1e-13)
    dy = rng.normal(size=x.shape)
    for a, c in zip(np_k["layer_norm_bwd"](dy, outs_np[1], outs_np[2], g),
                    nb_k["layer_norm_bwd"](dy, outs_np[1], outs_np[2], g)):
        assert np.allclose(a, c, atol=1e-12)


def test_masked_entries_are_exactly_zero(both, rng):
    x = rng.normal(size=(3, 4))
    mask = np.array([[1, 0, 1, 0], [1, 1, 1, 1], [0, 0, 0, 1]], dtype=bool)
    for k in both:
        y = k["softmax_rows"](x, mask)
        assert np.all(y[~mask] == 0.0)
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-15)


def test_env_flag_parsing(monkeypatch):
    monkeypatch.setenv("MAGFUSE_NUMBA", "0")
    assert not K.numba_requested()
    monkeypatch.setenv("MAGFUSE_NUMBA", "1")
    assert K.numba_requested()

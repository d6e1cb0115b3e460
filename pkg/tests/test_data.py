import json

import numpy as np
import pytest

from magfuse import data as D
from magfuse.errors import ConfigError, DataError, MissingInputError


def line(**kw):
    obj = {"id": "a", "words": ["so", "good"], "visual": [[0.1], [0.2]],
           "acoustic": [[0.0, 1.0], [1.0, 0.0]], "label": 1.5}
    obj.update(kw)
    return json.dumps(obj)


def test_parse_single_instance(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(line() + "\n")
    c = D.parse_jsonl(p)
    assert len(c) == 1 and c.instances[0].label == 1.5
    assert (c.d_visual, c.d_acoustic) == (1, 2)


def test_length_mismatch_names_line_and_lengths():
    text = [line(), line(words=["a", "b", "c"])]
    with pytest.raises(DataError, match=r"line 2: 3 words but 2 visual"):
        D.parse_lines(text)


def test_label_out_of_range():
    with pytest.raises(DataError, match=r"line 1: .*outside \[-3, \+3\]"):
        D.parse_lines([line(label=3.5)])


def test_malformed_json_and_inconsistent_dims():
    with pytest.raises(DataError, match="line 2: malformed JSON"):
        D.parse_lines([line(), "{nope"])
    with pytest.raises(DataError, match="line 2: feature dims"):
        D.parse_lines([line(), line(visual=[[0.1, 0.0], [0.2, 0.0]])])


def test_emotions_validated():
    assert D.parse_lines([line(emotions=[0, 1, 2, 3, 0, 0])]).instances[0].emotions[3] == 3.0
    with pytest.raises(DataError, match="outside"):
        D.parse_lines([line(emotions=[0, 1, 2, 4, 0, 0])])
    with pytest.raises(DataError, match="6 values"):
        D.parse_lines([line(emotions=[0, 1])])


def test_missing_file(tmp_path):
    with pytest.raises(MissingInputError):
        D.parse_jsonl(tmp_path / "absent.jsonl")


def test_unlabelled_stream_lines_allowed_on_request():
    obj = json.loads(line())
    del obj["label"]
    with pytest.raises(DataError, match="label"):
        D.parse_lines([json.dumps(obj)])
    assert D.parse_lines([json.dumps(obj)], require_label=False).instances[0].label is None


def test_round_trip(tmp_path):
    c = D.generate_synthetic(20, 5, D.GenConfig(emotions=True))
    p = tmp_path / "c.jsonl"
    D.write_jsonl(c, p)
    assert D.parse_jsonl(p) == c


def test_generation_is_deterministic():
    a = D.serialize(D.generate_synthetic(30, 11))
    b = D.serialize(D.generate_synthetic(30, 11))
    assert a == b
    assert a != D.serialize(D.generate_synthetic(30, 12))


def test_invalid_weights_rejected():
    with pytest.raises(ConfigError, match="sum to 1"):
        D.generate_synthetic(5, 0, D.GenConfig(w_text=0.5, w_visual=0.5, w_acoustic=0.5))
    with pytest.raises(ConfigError):
        D.generate_synthetic(5, 0, D.GenConfig(w_text=1.2, w_visual=-0.2, w_acoustic=0.0))


def _channel_means(c, name):
    return np.array([getattr(i, name)[:, 0].mean() for i in c.instances])


def test_text_only_weights_leave_features_uninformative():
    c = D.generate_synthetic(1000, 0, D.GenConfig(w_text=1.0, w_visual=0.0, w_acoustic=0.0))
    y = c.labels
    for name in ("visual", "acoustic"):
        r = np.corrcoef(_channel_means(c, name), y)[0, 1]
        assert abs(r) < 0.1


def test_noise_free_least_squares_readout_recovers_labels():
    c = D.generate_synthetic(200, 4, D.GenConfig(sigma=0.0))
    X = np.column_stack([_channel_means(c, "visual"), _channel_means(c, "acoustic")])
    coef, *_ = np.linalg.lstsq(X, c.labels, rcond=None)
    assert np.mean(np.abs(X @ coef - c.labels)) < 1e-6


def test_single_channel_only_up_to_its_weight():
    """The text lexicon alone cannot resolve weak intensities."""
    cfg = D.GenConfig(sigma=0.0)
    c = D.generate_synthetic(400, 1, cfg)
    neutral = [i for i in c.instances if D.text_level(cfg.w_text * i.label) == 0]
    assert neutral and max(abs(i.label) for i in neutral) < 0.5 / cfg.w_text
    lex = {w for lvl in D.LEXICON.values() for syn in lvl.values() for w in syn}
    assert all(not (set(i.words) & lex) for i in neutral)


def test_labels_and_lengths_in_range():
    cfg = D.GenConfig(min_len=2, max_len=5)
    for inst in D.generate_synthetic(100, 9, cfg).instances:
        assert -3 <= inst.label <= 3
        assert 2 <= len(inst) <= 5
        assert inst.visual.shape == (len(inst), 4)


def test_split_sizes_and_partition():
    c = D.generate_synthetic(10, 0)
    parts = D.split(c, D.SplitSpec(0.6, 0.2, 0.2, seed=3))
    assert [len(p) for p in parts] == [6, 2, 2]
    ids = [i.id for p in parts for i in p.instances]
    assert sorted(ids) == sorted(i.id for i in c.instances)
    again = D.split(c, D.SplitSpec(0.6, 0.2, 0.2, seed=3))
    assert [[i.id for i in p.instances] for p in parts] == [[i.id for i in p.instances] for p in again]


def test_split_vocab_from_train_only():
    c = D.generate_synthetic(60, 2)
    train, val, test = D.split(c)
    train_words = {w for i in train.instances for w in i.words}
    assert set(train.vocab.to_list()[2:]) == train_words
    n = len(train.vocab)
    for inst in val.instances + test.instances:
        for w, idx in zip(inst.words, train.vocab.encode(inst.words)):
            assert idx == (D.UNK_ID if w not in train_words else train.vocab.stoi[w])
    assert len(train.vocab) == n


def test_split_errors():
    with pytest.raises(DataError):
        D.split(D.generate_synthetic(2, 0))
    with pytest.raises(ConfigError):
        D.split(D.generate_synthetic(10, 0), D.SplitSpec(0.5, 0.5, 0.0))


def test_stream_spans_planted():
    c = D.generate_stream(40, 1, spans=[(8, 16, 2.5)], segment_len=4)
    steps = 0
    for inst in c.instances:
        if 8 <= steps < 16:
            assert inst.label == 2.5
        else:
            assert abs(inst.label) <= 0.5
        steps += len(inst)
    assert steps == 40
    assert c.instances[-1].end_time == 20.0

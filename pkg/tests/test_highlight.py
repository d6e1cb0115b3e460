import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magfuse import data as D
from magfuse import highlight as H
from magfuse.errors import ConfigError, DataError
from magfuse.metrics import pearson


def windows(n, length=4):
    return [H.StreamWindow(i * length, (i + 1) * length) for i in range(n)]


def test_window_offsets_example():
    assert H.window_offsets(10, 4, 2) == [(0, 4), (2, 6), (4, 8), (6, 10), (8, 10)]


def test_partial_window_rule():
    assert H.window_offsets(9, 4, 4) == [(0, 4), (4, 8)]  # 1 leftover step < 2
    assert H.window_offsets(10, 4, 4) == [(0, 4), (4, 8), (8, 10)]
    assert H.window_offsets(2, 4, 1) == [(0, 2)]
    with pytest.raises(DataError):
        H.window_offsets(1, 4, 1)
    with pytest.raises(ConfigError):
        H.window_offsets(10, 4, 0)


def test_segment_below_threshold_is_empty():
    assert H.segment(list(zip(windows(5), [0.1] * 5)), 1.0) == []


def test_segment_single_block():
    scores = [0.0, 2.0, 3.0, 2.5, 0.0]
    segs = H.segment(list(zip(windows(5), scores)), 1.0)
    assert len(segs) == 1
    s = segs[0]
    assert (s.start_step, s.end_step) == (4, 16)
    assert s.peak_score == 3.0 and s.mean_score == 2.5


def test_segment_gap_rule_twelve_windows():
    # windows of 4 steps, back to back: blocks at windows 2-3 (steps 8-16) and 5-6 (steps 20-28)
    scores = [0, 0, 2, 2, 0, 3, 3, 0, 0, 0, 0, 0]
    ws = list(zip(windows(12), scores))
    merged = H.segment(ws, 1.0, min_gap=5)  # gap of 4 steps < 5
    assert [(s.start_step, s.end_step) for s in merged] == [(8, 28)]
    split = H.segment(ws, 1.0, min_gap=4)  # gap 4 is not < 4
    assert [(s.start_step, s.end_step) for s in split] == [(8, 16), (20, 28)]
    assert H.segment(ws, 1.0, min_len=9) == []


def test_overlapping_windows_merge():
    ws = [(H.StreamWindow(0, 4), 2.0), (H.StreamWindow(2, 6), 2.0), (H.StreamWindow(8, 12), 2.0)]
    assert [(s.start_step, s.end_step) for s in H.segment(ws, 1.0)] == [(0, 6), (8, 12)]


def test_segment_times_from_stream():
    n = 8
    stream = H.Stream(["w"] * n, np.zeros((n, 1)), np.zeros((n, 1)),
                      np.arange(n) * 0.5, np.arange(1, n + 1) * 0.5)
    seg = H.segment([(H.StreamWindow(2, 6), 5.0)], 1.0, stream=stream)[0]
    assert (seg.start_time, seg.end_time) == (1.0, 3.0)


score_lists = st.lists(st.floats(0, 3, allow_nan=False), min_size=1, max_size=30)


def covered(segs):
    return sum(s.end_step - s.start_step for s in segs)


@settings(max_examples=100, deadline=None)
@given(score_lists, st.floats(0, 3), st.floats(0, 3), st.integers(1, 4), st.integers(0, 6))
def test_segment_properties(scores, t1, t2, stride, min_gap):
    lo, hi = sorted((t1, t2))
    ws = [(H.StreamWindow(i * stride, i * stride + 4), s) for i, s in enumerate(scores)]
    segs_lo = H.segment(ws, lo, min_gap=min_gap)
    segs_hi = H.segment(ws, hi, min_gap=min_gap)
    assert covered(segs_hi) <= covered(segs_lo)
    for segs in (segs_lo, segs_hi):
        for a, b in zip(segs, segs[1:]):
            assert a.end_step <= b.start_step
        for s in segs:
            assert s.end_step > s.start_step
            assert s.peak_score >= s.mean_score


def test_quantile_threshold_floor():
    assert H.quantile_threshold([0.1, 0.2, 0.3], 0.5, min_score=1.0) == 1.0
    assert H.quantile_threshold([1.0, 2.0, 3.0], 0.5, min_score=1.0) == 2.0
    with pytest.raises(ConfigError):
        H.quantile_threshold([1.0], 1.5)


def test_detect_requires_one_threshold_mode(stream_model):
    s = H.Stream(["x"] * 8, np.zeros((8, 4)), np.zeros((8, 4)))
    with pytest.raises(ConfigError):
        H.detect(s, stream_model, 4, 2)
    with pytest.raises(ConfigError):
        H.detect(s, stream_model, 4, 2, threshold=1.0, quantile=0.9)


def test_stream_length_mismatch():
    with pytest.raises(DataError):
        H.Stream(["a", "b"], np.zeros((3, 1)), np.zeros((2, 1)))


def test_scores_deterministic_and_track_planted_labels(stream_model):
    corpus = D.generate_synthetic(60, 21, D.GenConfig(min_len=4, max_len=4, sigma=0.0))
    stream = H.Stream.from_corpus(corpus)
    a = H.score_stream(stream, stream_model, 4, 4, positive_only=True)
    b = H.score_stream(stream, stream_model, 4, 4, positive_only=True)
    assert a == b
    signed = np.array([s for _, s in a])
    assert len(signed) == 60
    assert pearson(signed, corpus.labels) > 0.8
    absolute = H.score_stream(stream, stream_model, 4, 4)
    assert np.allclose([s for _, s in absolute], np.abs(signed))


def test_output_formats():
    segs = [H.HighlightSegment(0, 4, None, None, 2.0, 1.5), H.HighlightSegment(8, 12, 4.0, 6.0, 3.0, 3.0)]
    parsed = json.loads(H.segments_to_json(segs))
    assert parsed[1] == {"start_step": 8, "end_step": 12, "start_time": 4.0, "end_time": 6.0,
                         "peak_score": 3.0, "mean_score": 3.0}
    rows = list(csv.reader(io.StringIO(H.segments_to_csv(segs))))
    assert rows[0] == ["start_step", "end_step", "start_time", "end_time", "peak_score", "mean_score"]
    assert rows[1][:4] == ["0", "4", "", ""]

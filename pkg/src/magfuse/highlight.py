"""Sliding-window highlight detection over long multimodal streams."""

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from magfuse.data import MultimodalInstance
from magfuse.errors import ConfigError, DataError

DEFAULT_MIN_SCORE = 1.0


class Stream:
    """Word-aligned steps of a long recording, with optional per-step times."""

    def __init__(self, words, visual, acoustic, step_start=None, step_end=None):
        self.words = list(words)
        self.visual = np.asarray(visual, dtype=np.float64)
        self.acoustic = np.asarray(acoustic, dtype=np.float64)
        n = len(self.words)
        if self.visual.shape[0] != n or self.acoustic.shape[0] != n:
            raise DataError(
                f"stream has {n} words but {self.visual.shape[0]} visual and "
                f"{self.acoustic.shape[0]} acoustic vectors")
        self.step_start = None if step_start is None else np.asarray(step_start, dtype=np.float64)
        self.step_end = None if step_end is None else np.asarray(step_end, dtype=np.float64)

    def __len__(self):
        return len(self.words)

    @classmethod
    def from_corpus(cls, corpus):
        """Concatenate instances in order; instance times are spread evenly over their words."""
        insts = corpus.instances if hasattr(corpus, "instances") else list(corpus)
        words, vis, aco, t0, t1 = [], [], [], [], []
        timed = all(i.start_time is not None and i.end_time is not None for i in insts)
        for inst in insts:
            words.extend(inst.words)
            vis.append(inst.visual)
            aco.append(inst.acoustic)
            if timed:
                edges = np.linspace(inst.start_time, inst.end_time, len(inst) + 1)
                t0.append(edges[:-1])
                t1.append(edges[1:])
        return cls(words, np.vstack(vis), np.vstack(aco),
                   np.concatenate(t0) if timed else None, np.concatenate(t1) if timed else None)

    def view(self, start, end):
        return MultimodalInstance(f"window-{start}", self.words[start:end],
                                  self.visual[start:end], self.acoustic[start:end])


@dataclass
class StreamWindow:
    start_step: int
    end_step: int


@dataclass
class HighlightSegment:
    start_step: int
    end_step: int
    start_time: float
    end_time: float
    peak_score: float
    mean_score: float

    def to_dict(self):
        return asdict(self)


def window_offsets(n_steps, window_len, stride):
    """(start, end) pairs: full windows every ``stride`` steps, then at most one
    trailing partial window if it holds at least ``window_len / 2`` steps."""
    if window_len < 1 or stride < 1:
        raise ConfigError("window_len and stride must be >= 1")
    if n_steps < window_len / 2:
        raise DataError(f"stream of {n_steps} steps is shorter than half a window ({window_len})")
    spans, off = [], 0
    while off + window_len <= n_steps:
        spans.append((off, off + window_len))
        off += stride
    if off < n_steps and n_steps - off >= window_len / 2:
        spans.append((off, n_steps))
    return spans


def score_stream(stream, model, window_len, stride, positive_only=False, batch_size=16):
    """Score each window with the model in eval mode.

    The score is |predicted intensity|, or the signed prediction when
    ``positive_only`` is set.
    """
    spans = window_offsets(len(stream), window_len, stride)
    preds = model.predict([stream.view(a, b) for a, b in spans], batch_size=batch_size)
    scores = preds if positive_only else np.abs(preds)
    return [(StreamWindow(a, b), float(s)) for (a, b), s in zip(spans, scores)]


def quantile_threshold(scores, q, min_score=DEFAULT_MIN_SCORE):
    """The q-quantile of the window scores, never below ``min_score``."""
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"quantile must be in [0, 1], got {q}")
    vals = np.array([s for _, s in scores] if scores and isinstance(scores[0], tuple) else scores)
    return max(float(np.quantile(vals, q)), float(min_score))


def segment(scores, threshold, min_gap=0, min_len=0, stream=None):
    """Merge windows scoring >= threshold into sorted, disjoint segments.

    Overlapping or touching windows merge; segments whose gap is < ``min_gap``
    steps merge; segments shorter than ``min_len`` steps are dropped.
    """
    if min_gap < 0 or min_len < 0:
        raise ConfigError("min_gap and min_len must be >= 0")
    marked = sorted(((w.start_step, w.end_step, s) for w, s in scores if s >= threshold))
    groups = []
    for a, b, s in marked:
        # gap <= 0 means overlapping or touching
        if groups and a - groups[-1][1] < max(min_gap, 1):
            g = groups[-1]
            g[1] = max(g[1], b)
            g[2].append(s)
        else:
            groups.append([a, b, [s]])
    out = []
    for a, b, ss in groups:
        if b - a < min_len:
            continue
        t0 = t1 = None
        if stream is not None and stream.step_start is not None:
            t0, t1 = float(stream.step_start[a]), float(stream.step_end[b - 1])
        peak = float(max(ss))
        # np.mean of equal values can round one ulp above them
        out.append(HighlightSegment(a, b, t0, t1, peak, min(float(np.mean(ss)), peak)))
    return out


def detect(stream, model, window_len=16, stride=4, threshold=None, quantile=None,
           min_score=DEFAULT_MIN_SCORE, min_gap=0, min_len=0, positive_only=False):
    """Score, pick the threshold (absolute, or quantile floored at ``min_score``), segment."""
    if (threshold is None) == (quantile is None):
        raise ConfigError("give exactly one of threshold or quantile")
    scores = score_stream(stream, model, window_len, stride, positive_only)
    if quantile is not None:
        threshold = quantile_threshold(scores, quantile, min_score)
    return segment(scores, threshold, min_gap, min_len, stream), threshold, scores


def segments_to_json(segments):
    return json.dumps([s.to_dict() for s in segments], indent=2)


def segments_to_csv(segments):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["start_step", "end_step", "start_time", "end_time", "peak_score", "mean_score"])
    for s in segments:
        w.writerow([s.start_step, s.end_step, "" if s.start_time is None else s.start_time,
                    "" if s.end_time is None else s.end_time, s.peak_score, s.mean_score])
    return buf.getvalue()

"""Multimodal instances, JSONL I/O, synthetic corpora and splitting.

JSONL schema, one object per line::

    {"id": "...", "words": [...], "visual": [[...], ...], "acoustic": [[...], ...],
     "label": 1.5, "emotions": [6 floats] | null,
     "start_time": 0.0 | null, "end_time": 2.0 | null}

``visual`` and ``acoustic`` hold one vector per word. Labels lie in [-3, 3];
emotions are {happiness, sadness, anger, fear, disgust, surprise} in [0, 3].
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from magfuse.errors import ConfigError, DataError, MissingInputError

EMOTIONS = ("happiness", "sadness", "anger", "fear", "disgust", "surprise")
PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

FILLER = (
    "the", "a", "and", "so", "it", "was", "i", "think", "this", "that", "um", "uh",
    "movie", "really", "just", "like", "you", "know", "of", "to",
)
# polarity -> level -> synonyms; levels are cut on |w_text * s| at 0.5, 1, 2
LEXICON = {
    1: {1: ("good", "nice", "fine"), 2: ("great", "lovely", "excellent"),
        3: ("amazing", "fantastic", "brilliant")},
    -1: {1: ("bad", "poor", "dull"), 2: ("awful", "horrible", "nasty"),
         3: ("terrible", "dreadful", "atrocious")},
}
LEVEL_CUTS = (0.5, 1.0, 2.0)


def make_rng(seed):
    """The package-wide generator: numpy PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(eq=False)
class MultimodalInstance:
    id: str
    words: list
    visual: np.ndarray
    acoustic: np.ndarray
    label: float = None
    emotions: list = None
    start_time: float = None
    end_time: float = None

    def __len__(self):
        return len(self.words)

    def __eq__(self, other):
        if not isinstance(other, MultimodalInstance):
            return NotImplemented
        return (
            self.id == other.id
            and list(self.words) == list(other.words)
            and np.array_equal(self.visual, other.visual)
            and np.array_equal(self.acoustic, other.acoustic)
            and self.label == other.label
            and self.emotions == other.emotions
            and self.start_time == other.start_time
            and self.end_time == other.end_time
        )

    def to_json(self):
        return {
            "id": self.id,
            "words": list(self.words),
            "visual": self.visual.tolist(),
            "acoustic": self.acoustic.tolist(),
            "label": self.label,
            "emotions": None if self.emotions is None else list(self.emotions),
            "start_time": self.start_time,
            "end_time": self.end_time,
        }


class Vocabulary:
    def __init__(self, tokens=()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, instances):
        return cls(w for inst in instances for w in inst.words)

    def add(self, tok):
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def encode(self, words):
        return [self.stoi.get(w, UNK_ID) for w in words]

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def to_list(self):
        return list(self.itos)

    @classmethod
    def from_list(cls, items):
        if list(items[:2]) != [PAD, UNK]:
            raise DataError("vocabulary must start with the reserved <pad>, <unk> entries")
        return cls(items[2:])


@dataclass(eq=False)
class Corpus:
    instances: list
    vocab: Vocabulary
    d_visual: int
    d_acoustic: int

    def __len__(self):
        return len(self.instances)

    def __eq__(self, other):
        return (
            isinstance(other, Corpus)
            and self.instances == other.instances
            and self.vocab == other.vocab
            and (self.d_visual, self.d_acoustic) == (other.d_visual, other.d_acoustic)
        )

    @property
    def labels(self):
        return np.array([inst.label for inst in self.instances], dtype=np.float64)

    @classmethod
    def from_instances(cls, instances, vocab=None):
        instances = list(instances)
        if not instances:
            raise DataError("corpus is empty")
        dv, da = instances[0].visual.shape[1], instances[0].acoustic.shape[1]
        for inst in instances:
            if inst.visual.shape[1] != dv or inst.acoustic.shape[1] != da:
                raise DataError(f"instance {inst.id}: feature dims differ from corpus ({dv}, {da})")
        return cls(instances, vocab if vocab is not None else Vocabulary.build(instances), dv, da)


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------


def _as_matrix(rows, name, n_words, line):
    if not isinstance(rows, list):
        raise DataError(f"'{name}' must be a list of vectors", line)
    if len(rows) != n_words:
        raise DataError(f"{n_words} words but {len(rows)} {name} vectors", line)
    try:
        arr = np.array(rows, dtype=np.float64)
    except (TypeError, ValueError):
        raise DataError(f"'{name}' vectors must be equal-length lists of numbers", line) from None
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise DataError(f"'{name}' vectors must be non-empty and equal length", line)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"'{name}' contains non-finite values", line)
    return arr


def _optional_real(obj, key, line):
    val = obj.get(key)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise DataError(f"'{key}' must be a finite number", line)
    return float(val)


def instance_from_json(obj, line=None, require_label=True):
    if not isinstance(obj, dict):
        raise DataError("each line must hold a JSON object", line)
    for key in ("id", "words", "visual", "acoustic"):
        if key not in obj:
            raise DataError(f"missing field '{key}'", line)
    words = obj["words"]
    if not isinstance(words, list) or not words or not all(isinstance(w, str) for w in words):
        raise DataError("'words' must be a non-empty list of strings", line)
    visual = _as_matrix(obj["visual"], "visual", len(words), line)
    acoustic = _as_matrix(obj["acoustic"], "acoustic", len(words), line)
    label = _optional_real(obj, "label", line)
    if label is None and require_label:
        raise DataError("missing field 'label'", line)
    if label is not None and not -3.0 <= label <= 3.0:
        raise DataError(f"label {label} outside [-3, +3]", line)
    emotions = obj.get("emotions")
    if emotions is not None:
        if not isinstance(emotions, list) or len(emotions) != len(EMOTIONS):
            raise DataError(f"'emotions' must list {len(EMOTIONS)} values {EMOTIONS}", line)
        emotions = [float(e) for e in emotions]
        if not all(0.0 <= e <= 3.0 for e in emotions):
            raise DataError(f"emotion values {emotions} outside [0, 3]", line)
    start, end = _optional_real(obj, "start_time", line), _optional_real(obj, "end_time", line)
    for t in (start, end):
        if t is not None and t < 0:
            raise DataError("start_time/end_time must be nonnegative", line)
    return MultimodalInstance(str(obj["id"]), list(words), visual, acoustic, label, emotions, start, end)


def parse_lines(lines, require_label=True):
    instances, dims = [], None
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed JSON ({exc.msg})", lineno) from None
        inst = instance_from_json(obj, lineno, require_label)
        here = (inst.visual.shape[1], inst.acoustic.shape[1])
        if dims is None:
            dims = here
        elif here != dims:
            raise DataError(
                f"feature dims (visual {here[0]}, acoustic {here[1]}) differ from "
                f"earlier lines (visual {dims[0]}, acoustic {dims[1]})", lineno)
        instances.append(inst)
    if not instances:
        raise DataError("no instances found")
    return Corpus.from_instances(instances)


def parse_jsonl(path, require_label=True):
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"data file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return parse_lines(fh, require_label)


def serialize(corpus):
    return "".join(json.dumps(inst.to_json()) + "\n" for inst in corpus.instances)


def write_jsonl(corpus, path):
    text = serialize(corpus)
    Path(path).write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass
class GenConfig:
    min_len: int = 6
    max_len: int = 16
    d_visual: int = 4
    d_acoustic: int = 4
    w_text: float = 1 / 3
    w_visual: float = 1 / 3
    w_acoustic: float = 1 / 3
    sigma: float = 0.1
    emotions: bool = False

    def validate(self):
        ws = (self.w_text, self.w_visual, self.w_acoustic)
        if any(w < 0 for w in ws):
            raise ConfigError("modality weights must be >= 0")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ConfigError(f"modality weights must sum to 1, got {sum(ws):.6g}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.d_visual < 1 or self.d_acoustic < 1:
            raise ConfigError("feature dims must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        return self

    def to_dict(self):
        return asdict(self)


def text_level(x):
    """Lexicon intensity level (0 = neutral .. 3) for a text-channel value x."""
    ax = abs(x)
    return sum(ax >= c for c in LEVEL_CUTS)


def _words_for(rng, n, x):
    words = [FILLER[i] for i in rng.integers(0, len(FILLER), n)]
    level = text_level(x)
    if level:
        syn = LEXICON[1 if x > 0 else -1][level]
        slots = rng.choice(n, size=min(level, n), replace=False)
        for j in sorted(slots.tolist()):
            words[j] = syn[int(rng.integers(0, len(syn)))]
    return words


def _emotion_vector(rng, s):
    e = np.clip(rng.normal(0.3, 0.2, len(EMOTIONS)), 0.0, 3.0)
    e[0] = min(3.0, max(0.0, s))
    e[1] = min(3.0, max(0.0, -s))
    return [float(x) for x in e]


def _make_instance(rng, ident, n, s, cfg):
    words = _words_for(rng, n, cfg.w_text * s)
    visual = rng.normal(0.0, 1.0, (n, cfg.d_visual)) * cfg.sigma
    acoustic = rng.normal(0.0, 1.0, (n, cfg.d_acoustic)) * cfg.sigma
    visual[:, 0] += cfg.w_visual * s
    acoustic[:, 0] += cfg.w_acoustic * s
    emotions = _emotion_vector(rng, s) if cfg.emotions else None
    return MultimodalInstance(ident, words, visual, acoustic, float(s), emotions)


def generate_synthetic(n, seed, cfg=None):
    """Corpus with planted latent intensities s ~ U[-3, 3], label = s.

    Visual and acoustic channel 0 carry ``w * s`` at every word; all feature
    entries get N(0, sigma^2) noise. The text carries ``w_text * s`` only through
    a coarse sentiment lexicon that is neutral while ``|w_text * s| < 0.5``.
    """
    cfg = (cfg or GenConfig()).validate()
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = make_rng(seed)
    instances = []
    for i in range(n):
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        s = float(rng.uniform(-3.0, 3.0))
        instances.append(_make_instance(rng, f"syn-{seed}-{i:06d}", length, s, cfg))
    return Corpus.from_instances(instances)


def generate_stream(n_steps, seed, spans=(), cfg=None, segment_len=4, background=0.5,
                    step_seconds=0.5):
    """A long stream as consecutive short instances with timings.

    ``spans`` lists ``(start_step, end_step, intensity)``; steps inside a span get
    that intensity, others a background intensity drawn per segment from
    U[-background, background]. Segments never straddle a span edge.
    """
    cfg = (cfg or GenConfig()).validate()
    rng = make_rng(seed)
    spans = sorted((int(a), int(b), float(s)) for a, b, s in spans)
    for a, b, s in spans:
        if not 0 <= a < b <= n_steps or not -3.0 <= s <= 3.0:
            raise ConfigError(f"invalid span ({a}, {b}, {s}) for a {n_steps}-step stream")
    edges = {0, n_steps}
    for a, b, _ in spans:
        edges.update((a, b))
    edges = sorted(edges)
    instances = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        planted = next((s for a, b, s in spans if a <= lo and hi <= b), None)
        t = lo
        while t < hi:
            n = min(segment_len, hi - t)
            s = planted if planted is not None else float(rng.uniform(-background, background))
            inst = _make_instance(rng, f"stream-{seed}-{t:06d}", n, s, cfg)
            inst.start_time, inst.end_time = t * step_seconds, (t + n) * step_seconds
            instances.append(inst)
            t += n
    return Corpus.from_instances(instances)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


@dataclass
class SplitSpec:
    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def validate(self):
        fr = (self.train, self.val, self.test)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be > 0 and sum to 1, got {fr}")
        return self


def split(corpus, spec=None):
    spec = (spec or SplitSpec()).validate()
    n = len(corpus)
    if n < 3:
        raise DataError(f"need at least 3 instances to split, got {n}")
    n_val = max(1, int(round(spec.val * n)))
    n_test = max(1, int(round(spec.test * n)))
    n_train = n - n_val - n_test
    if n_train < 1:
        n_train, n_val, n_test = 1, max(1, n_val - 1), n_test
        n_test = n - n_train - n_val
    order = make_rng(spec.seed).permutation(n)
    parts = np.split(order, [n_train, n_train + n_val])
    train_inst = [corpus.instances[i] for i in parts[0]]
    vocab = Vocabulary.build(train_inst)
    return tuple(
        Corpus([corpus.instances[i] for i in idx], vocab, corpus.d_visual, corpus.d_acoustic)
        for idx in parts
    )


def corpus_checksum(corpus):
    return hashlib.sha256(serialize(corpus).encode("utf-8")).hexdigest()

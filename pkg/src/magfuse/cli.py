"""Command line: ``magfuse {gen,train,eval,highlight}``.

Every run writes ``resolved_config.json`` (config file merged with ``--set``
overrides and flags) into its output directory. Errors print one line
``<ErrorClass>: <message>`` to stderr and exit with the class's code:
2 config, 3 data, 4 numeric, 5 dimension mismatch, 6 missing input.
"""

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

from magfuse import data as D
from magfuse import highlight as H
from magfuse import train as TR
from magfuse.errors import ConfigError, MagFuseError, MissingInputError
from magfuse.model import MagFuseModel, ModelConfig

DEFAULT_SEED = 0
SEED_ENV = "MAGFUSE_SEED"

DEFAULTS = {
    "model": ModelConfig().to_dict(),
    "train": {k: v for k, v in TR.TrainConfig().to_dict().items() if k != "seed"},
    "split": {"train": 0.7, "val": 0.15, "test": 0.15},
    "gen": D.GenConfig().to_dict(),
}


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, item):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form dotted.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p!r} is not a section")
    node[parts[-1]] = _parse_value(raw)


def _deep_merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(config_path=None, overrides=(), seed=None):
    """Defaults < config file < ``--set`` overrides; seed: flag > file/overrides > env > 0."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise MissingInputError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _deep_merge(cfg, user)
    for item in overrides or ():
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    elif "seed" not in cfg:
        env = os.environ.get(SEED_ENV)
        try:
            cfg["seed"] = int(env) if env not in (None, "") else DEFAULT_SEED
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {cfg['seed']!r}")
    return cfg


def _build(cls, section, name):
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad '{name}' section: {exc}") from None


def _prepare_out(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _parse_span(text):
    try:
        a, b, s = text.split(":")
        return int(a), int(b), float(s)
    except ValueError:
        raise ConfigError(f"span {text!r} must look like start:end:intensity") from None


def cmd_gen(args):
    cfg = resolve_config(args.config, args.set, args.seed)
    gen = cfg["gen"]
    for flag, key in (("w_text", "w_text"), ("w_visual", "w_visual"), ("w_acoustic", "w_acoustic"),
                      ("sigma", "sigma"), ("min_len", "min_len"), ("max_len", "max_len"),
                      ("d_visual", "d_visual"), ("d_acoustic", "d_acoustic")):
        val = getattr(args, flag)
        if val is not None:
            gen[key] = val
    if args.emotions:
        gen["emotions"] = True
    gc = _build(D.GenConfig, gen, "gen").validate()
    out = _prepare_out(args.out)
    if args.stream_steps:
        spans = [_parse_span(s) for s in args.span or ()]
        cfg["stream"] = {"n_steps": args.stream_steps, "spans": spans,
                         "segment_len": args.segment_len}
        corpus = D.generate_stream(args.stream_steps, cfg["seed"], spans, gc, args.segment_len)
        name = "stream.jsonl"
    else:
        cfg["n"] = args.n
        corpus = D.generate_synthetic(args.n, cfg["seed"], gc)
        name = "corpus.jsonl"
    checksum = D.write_jsonl(corpus, out / name)
    _write_json(out / "manifest.json", {"file": name, "seed": cfg["seed"], "n_lines": len(corpus),
                                        "gen_config": gc.to_dict(), "sha256": checksum})
    _write_json(out / "resolved_config.json", cfg)
    print(json.dumps({"file": str(out / name), "n_lines": len(corpus), "sha256": checksum}))
    return 0


def cmd_train(args):
    cfg = resolve_config(args.config, args.set, args.seed)
    if args.text_only:
        cfg["text_only"] = True
    corpus = D.parse_jsonl(args.data)
    spec = _build(D.SplitSpec, dict(cfg["split"], seed=cfg["seed"]), "split")
    train_c, val_c, test_c = D.split(corpus, spec)
    model_cfg = cfg["model"]
    enc, mag = model_cfg.setdefault("encoder", {}), model_cfg.setdefault("mag", {})
    enc["vocab_size"] = len(train_c.vocab)
    mag["d_model"] = enc.get("d_model", DEFAULTS["model"]["encoder"]["d_model"])
    mag["d_visual"], mag["d_acoustic"] = corpus.d_visual, corpus.d_acoustic
    mc = ModelConfig.from_dict(model_cfg).validate()
    tc = _build(TR.TrainConfig, dict(cfg["train"], seed=cfg["seed"]), "train").validate()
    out = _prepare_out(args.out)
    cfg["model"] = mc.to_dict()
    _write_json(out / "resolved_config.json", cfg)

    model = MagFuseModel(mc, train_c.vocab, seed=cfg["seed"])
    text_only = bool(cfg.get("text_only", False))
    weights, runlog = TR.train(model, train_c, val_c, tc, zero_nonlexical=text_only)
    model.set_weights(weights)
    cfg["model"] = model.config.to_dict()  # dropout as trained
    _write_json(out / "resolved_config.json", cfg)
    TR.save_checkpoint(weights, model.config, out / "checkpoint", train_c.vocab,
                       extra={"text_only": text_only, "best_epoch": runlog.best_epoch()})
    runlog.write(out)
    D.write_jsonl(test_c, out / "test.jsonl")
    report = TR.evaluate_model(model, test_c, zero_nonlexical=text_only)
    _write_json(out / "test_metrics.json", report.to_dict())
    print(json.dumps({"checkpoint": str(out / "checkpoint"), "best_epoch": runlog.best_epoch(),
                      "test": report.to_dict()}))
    return 0


def _text_only_flag(ckpt):
    manifest = json.loads((Path(ckpt) / "manifest.json").read_text(encoding="utf-8"))
    return bool(manifest.get("extra", {}).get("text_only", False))


def cmd_eval(args):
    cfg = resolve_config(args.config, args.set, args.seed)
    cfg.update(checkpoint=str(args.checkpoint), data=str(args.data))
    model = TR.load_model(args.checkpoint)
    corpus = D.parse_jsonl(args.data)
    text_only = _text_only_flag(args.checkpoint)
    report = TR.evaluate_model(model, corpus, zero_nonlexical=text_only)
    out = _prepare_out(args.out)
    cfg["model"] = model.config.to_dict()
    _write_json(out / "resolved_config.json", cfg)
    _write_json(out / "metrics.json", report.to_dict())
    print(json.dumps(report.to_dict()))
    return 0


def cmd_highlight(args):
    cfg = resolve_config(args.config, args.set, args.seed)
    if (args.threshold is None) == (args.quantile is None):
        raise ConfigError("give exactly one of --threshold or --quantile")
    cfg["highlight"] = {
        "checkpoint": str(args.checkpoint), "stream": str(args.stream), "window": args.window,
        "stride": args.stride, "threshold": args.threshold, "quantile": args.quantile,
        "min_score": args.min_score, "min_gap": args.min_gap, "min_len": args.min_len,
        "positive_only": args.positive_only,
    }
    model = TR.load_model(args.checkpoint)
    stream = H.Stream.from_corpus(D.parse_jsonl(args.stream, require_label=False))
    segments, threshold, _ = H.detect(
        stream, model, args.window, args.stride, threshold=args.threshold,
        quantile=args.quantile, min_score=args.min_score, min_gap=args.min_gap,
        min_len=args.min_len, positive_only=args.positive_only)
    cfg["highlight"]["resolved_threshold"] = threshold
    out = _prepare_out(args.out)
    _write_json(out / "resolved_config.json", cfg)
    text = H.segments_to_json(segments)
    (out / "segments.json").write_text(text + "\n", encoding="utf-8")
    if args.csv:
        (out / "segments.csv").write_text(H.segments_to_csv(segments), encoding="utf-8")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="magfuse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, e.g. train.epochs=5 (repeatable)")
        sp.add_argument("--seed", type=int, help=f"seed (falls back to ${SEED_ENV}, then 0)")
        sp.add_argument("-o", "--out", default=out_default, required=out_default is None,
                        help="output directory (created if absent)")

    g = sub.add_parser("gen", help="write a synthetic corpus or highlight stream")
    common(g)
    g.add_argument("--n", type=int, default=100, help="number of instances")
    g.add_argument("--w-text", dest="w_text", type=float)
    g.add_argument("--w-visual", dest="w_visual", type=float)
    g.add_argument("--w-acoustic", dest="w_acoustic", type=float)
    g.add_argument("--sigma", type=float)
    g.add_argument("--min-len", dest="min_len", type=int)
    g.add_argument("--max-len", dest="max_len", type=int)
    g.add_argument("--d-visual", dest="d_visual", type=int)
    g.add_argument("--d-acoustic", dest="d_acoustic", type=int)
    g.add_argument("--emotions", action="store_true", help="attach emotion vectors")
    g.add_argument("--stream-steps", dest="stream_steps", type=int,
                   help="write a long stream of this many steps instead of a corpus")
    g.add_argument("--span", action="append", help="planted span start:end:intensity")
    g.add_argument("--segment-len", dest="segment_len", type=int, default=4)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a JSONL corpus")
    common(t)
    t.add_argument("--data", required=True, help="corpus JSONL")
    t.add_argument("--text-only", dest="text_only", action="store_true",
                   help="zero the visual/acoustic inputs (baseline)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a JSONL corpus")
    common(e, out_default=".")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("highlight", help="find highlight segments in a long stream")
    common(h, out_default=".")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--stream", required=True, help="stream JSONL (instances in time order)")
    h.add_argument("--window", type=int, default=16)
    h.add_argument("--stride", type=int, default=4)
    h.add_argument("--threshold", type=float, help="absolute score threshold")
    h.add_argument("--quantile", type=float, help="threshold at this quantile of window scores")
    h.add_argument("--min-score", dest="min_score", type=float, default=H.DEFAULT_MIN_SCORE,
                   help="floor for the quantile-derived threshold")
    h.add_argument("--min-gap", dest="min_gap", type=int, default=0)
    h.add_argument("--min-len", dest="min_len", type=int, default=0)
    h.add_argument("--positive-only", dest="positive_only", action="store_true")
    h.add_argument("--csv", action="store_true", help="also write segments.csv")
    h.set_defaults(func=cmd_highlight)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MagFuseError as exc:
        msg = " ".join(str(exc).split())
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``rlm <subcommand> ...``.

Config files are JSON with optional ``corpus``, ``train`` and ``decode``
sections; flags override the file, the file overrides built-in defaults.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

CORPUS_DEFAULTS = {"n_train": 4000, "n_eval": 200, "seed": 0, "max_len": 32, "grammar": None}
DECODE_DEFAULTS = {"topk": 5, "insert": True, "delete": True, "max_insert": 4}


_ARGV = None


class UsageError(Exception):
    pass


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, subcommand, config, seed, inputs, outputs):
    manifest = {
        "subcommand": subcommand,
        "argv": list(sys.argv[1:]) if _ARGV is None else list(_ARGV),
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _read_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must be a JSON object")
    unknown = set(cfg) - {"corpus", "train", "decode"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _need_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _need_dir(path, what):
    if not Path(path).is_dir():
        raise UsageError(f"{what} not found: {path}")


def _decode_settings(cfg, args):
    d = dict(DECODE_DEFAULTS)
    d.update(cfg.get("decode", {}))
    for key in ("topk", "insert", "delete", "max_insert"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if d["topk"] < 1:
        raise UsageError("--topk must be >= 1")
    if d["max_insert"] < 0:
        raise UsageError("--max-insert must be >= 0")
    return d


def _flags(d):
    from .decoder import DecodeFlags

    return DecodeFlags(insert=d["insert"], delete=d["delete"], max_insert=d["max_insert"])


def _load_checkpoint(path):
    from .train import Checkpoint

    _need_file(path, "checkpoint")
    return Checkpoint.load(path)


# subcommands --------------------------------------------------------------------------


def cmd_gen_corpus(args):
    from .corpus import DEFAULT_GRAMMAR, generate_corpus, save_corpus

    cfg = dict(CORPUS_DEFAULTS)
    cfg.update(_read_config(args.config).get("corpus", {}))
    if args.seed is not None:
        cfg["seed"] = args.seed
    unknown = set(cfg) - set(CORPUS_DEFAULTS)
    if unknown:
        raise UsageError(f"unknown corpus keys: {sorted(unknown)}")
    grammar = cfg["grammar"] or DEFAULT_GRAMMAR
    corpus = generate_corpus(grammar, cfg["n_train"], cfg["n_eval"], cfg["seed"], cfg["max_len"])
    out = Path(args.out)
    files = save_corpus(corpus, out)
    write_manifest(out / "manifest.json", "gen-corpus", cfg, cfg["seed"], [args.config or ""], files)
    print(f"wrote {len(corpus.train)} train / {len(corpus.eval)} eval sentences, "
          f"{len(corpus.vocab_words)} words to {out}")


def cmd_train(args):
    from .corpus import load_corpus
    from .train import TrainConfig, run_training

    _need_dir(args.corpus, "corpus directory")
    raw = dict(_read_config(args.config).get("train", {}))
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.steps is not None:
        raw["steps"] = args.steps
    try:
        cfg = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    corpus = load_corpus(args.corpus)
    resume = None
    if args.resume:
        resume = _load_checkpoint(args.resume)
    out = Path(args.out)
    t0 = time.perf_counter()
    ckpt, records = run_training(cfg, corpus, out_dir=out, resume=resume)
    outputs = sorted(out.glob("*.rlm")) + [out / "metrics.jsonl"]
    inputs = [args.config or "", *(Path(args.corpus) / n for n in ("train.jsonl", "eval.jsonl", "meta.json"))]
    write_manifest(out / "manifest.json", "train", cfg.to_dict(), cfg.seed, inputs, outputs)
    last = records[-1] if records else {}
    print(f"trained {ckpt.step} steps in {time.perf_counter() - t0:.1f}s; "
          f"final total loss {last.get('total', float('nan')):.4f}")


def cmd_transfer(args):
    from .decoder import transfer

    ckpt = _load_checkpoint(args.checkpoint)
    _need_file(args.input, "input file")
    d = _decode_settings(_read_config(args.config), args)
    if args.style not in ckpt.styles:
        raise UsageError(f"unknown style {args.style!r}; choose from {ckpt.styles}")
    style = ckpt.styles.index(args.style)
    vocab = ckpt.vocab()
    flags = _flags(d)
    out_fh = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        with open(args.input, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                toks = line.split()
                if not toks:
                    continue
                try:
                    ids = vocab.encode(toks)
                except KeyError as exc:
                    raise RuntimeError(f"line {lineno}: {exc.args[0]}") from None
                res = transfer(ckpt.model, ids, style, d["topk"], flags)
                rec = res.to_record(vocab, ids, args.style)
                out_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                out_fh.flush()
    finally:
        if args.output:
            out_fh.close()
    manifest_path = args.manifest or (Path(args.output).with_suffix(".manifest.json") if args.output else None)
    if manifest_path:
        write_manifest(manifest_path, "transfer", {"decode": d, "style": args.style}, None,
                       [args.checkpoint, args.input], [args.output] if args.output else [])


def cmd_eval(args):
    from .corpus import load_corpus
    from .metrics import RuleClassifier, evaluate_run, gold_transfer, identity_transfer, model_transfer_fn

    _need_dir(args.corpus, "corpus directory")
    if args.stub is None and args.checkpoint is None:
        raise UsageError("eval needs --checkpoint or --stub")
    d = _decode_settings(_read_config(args.config), args)
    corpus = load_corpus(args.corpus)
    pairs = corpus.eval if args.split == "eval" else None
    if pairs is None:
        raise UsageError(f"split {args.split!r} has no references")
    if args.stub == "gold":
        fn = gold_transfer(pairs)
    elif args.stub == "identity":
        fn = identity_transfer
    else:
        ckpt = _load_checkpoint(args.checkpoint)
        fn = model_transfer_fn(ckpt.model, ckpt.vocab(), ckpt.styles, d["topk"], _flags(d))
    # the checkpoint is identified by content so identical runs give identical reports
    ckpt_hash = _sha256(args.checkpoint) if args.checkpoint else None
    config = {"decode": d, "stub": args.stub, "checkpoint_sha256": ckpt_hash, "split": args.split}
    report = evaluate_run(fn, pairs, corpus.styles, RuleClassifier(corpus.lexicons), config)
    print(report.table(args.name))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        with open(out / "outputs.jsonl", "w", encoding="utf-8") as fh:
            for row in report.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        inputs = [args.checkpoint or "", Path(args.corpus) / "eval.jsonl"]
        write_manifest(out / "manifest.json", "eval", config, None, inputs,
                       [out / "report.json", out / "outputs.jsonl"])


def cmd_oracle_check(args):
    from .oracle import run_oracle_check

    if args.instances < 1 or args.vocab < 1 or args.len < 1:
        raise UsageError("--instances, --vocab and --len must be positive")
    scorer = None
    if args.checkpoint:
        scorer = _load_checkpoint(args.checkpoint).model
    report = run_oracle_check(args.instances, args.vocab, args.len, args.seed, scorer=scorer)
    rec = report.to_record()
    text = json.dumps(rec, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle_report.json").write_text(text + "\n", encoding="utf-8")
        cfg = {"instances": args.instances, "vocab": args.vocab, "len": args.len}
        write_manifest(out / "manifest.json", "oracle-check", cfg, args.seed,
                       [args.checkpoint or ""], [out / "oracle_report.json"])
    if not report.passed:
        raise RuntimeError(f"oracle disagreement: {report.step_disagreements} step(s), "
                           f"max score divergence {report.max_score_divergence:.3g}")


# parser ----------------------------------------------------------------------------


def _add_decode_flags(p):
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--insert", dest="insert", action="store_true", default=None)
    p.add_argument("--no-insert", dest="insert", action="store_false")
    p.add_argument("--delete", dest="delete", action="store_true", default=None)
    p.add_argument("--no-delete", dest="delete", action="store_false")
    p.add_argument("--max-insert", dest="max_insert", type=int, default=None)
    p.add_argument("--config", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="rlm", description="Replacing language model for style transfer.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic parallel corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="transfer sentences (one per line) to a target style")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--output", default=None, help="JSONL output (default stdout)")
    p.add_argument("--manifest", default=None)
    _add_decode_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="score transfers of the eval split")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--stub", choices=["gold", "identity"], default=None)
    p.add_argument("--name", default="RLM")
    p.add_argument("--out", default=None)
    _add_decode_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check", help="compare the decoder against brute force")
    p.add_argument("--checkpoint", default=None, help="score with a trained model instead of random tiny ones")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--vocab", type=int, default=12)
    p.add_argument("--len", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None):
    global _ARGV
    _ARGV = argv
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"rlm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any failure becomes a one-line reason
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"rlm {args.command}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

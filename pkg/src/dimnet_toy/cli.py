"""Command-line entry point: gen-data, train, decode, eval, ablate, grad-check.

Every command reads an optional ``--config`` file of ``key = value`` lines;
``--<key>`` flags override it. The effective values are frozen next to the
command's outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional

from . import config as C
from .errors import CheckpointError, ConfigError, DimnetError, ParseError
from .synthgen import CorpusSpec, generate_corpus, load_corpus, save_corpus
from .training import TrainConfig

GRAD_TOLERANCE = 1e-4


def _values(args) -> Dict:
    from_file, flags = C.collect(args, args.config)
    merged = dict(from_file)
    merged.update(flags)
    return C.effective(merged)


def _freeze(path: Path, values: Dict, cls_list):
    names = set()
    for cls in cls_list:
        names |= {f.name for f in fields(cls)}
    C.write_config(path, {k: v for k, v in values.items() if k in names})


def _load_run(run: Path, corpus):
    from .training import load_model

    ckpt = run / "checkpoint.pt"
    if not ckpt.exists():
        raise CheckpointError(f"checkpoint not found: {ckpt}")
    feat_dim = next(iter(u for s in corpus.splits.values() for u in s)).frames.shape[1]
    model, _ = load_model(ckpt, corpus.lexicon, feat_dim, corpus.n_accents)
    return model


def _split(corpus, name: str):
    if name not in corpus.splits:
        raise ConfigError(f"unknown split {name!r}; available: {', '.join(corpus.splits)}")
    return corpus[name]


def cmd_gen_data(args) -> int:
    vals = _values(args)
    corpus = generate_corpus(C.corpus_spec(vals))
    out = Path(args.out)
    save_corpus(corpus, out, external_features=args.external_features)
    _freeze(out / "config.txt", vals, [CorpusSpec])
    print(f"wrote corpus to {out}: " + ", ".join(f"{k}={len(v)}" for k, v in corpus.splits.items()))
    return 0


def cmd_train(args) -> int:
    from .training import train

    vals = _values(args)
    cfg = C.train_config(vals)
    corpus = load_corpus(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _freeze(out / "config.txt", vals, [TrainConfig])
    result = train(corpus, cfg, out_dir=out, eval_dev=not args.no_eval)
    last = result.history[-1] if result.history else {}
    print(f"trained {cfg.epochs} epochs into {out}: {json.dumps(last)}")
    return 0


def cmd_decode(args) -> int:
    from .decoding import accent_record, decode_record, decode_utterances, make_lm, \
        write_decode_jsonl
    from .training import ctc_lexicon

    vals = _values(args)
    opts = C.decode_options(vals)
    corpus = load_corpus(args.data)
    run = Path(args.run)
    model = _load_run(run, corpus)
    utts = _split(corpus, args.split)
    clex = ctc_lexicon(corpus.lexicon, model.cfg.units)
    decoded = decode_utterances(model, utts, clex, opts.beam, opts.w1, opts.w2, opts.w3,
                                make_lm(opts.lm, corpus.lexicon), opts.length_penalty,
                                opts.batch_size, first_pass_only=args.first_pass_only)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    write_decode_jsonl(out / f"decode-{args.split}.jsonl",
                       (decode_record(d.utt_id, d.best, d.nbest) for d in decoded))
    write_decode_jsonl(out / f"accent-{args.split}.jsonl",
                       (accent_record(d.utt_id, d.posteriors) for d in decoded))
    _freeze(out / f"decode-{args.split}.config.txt", vals, [C.DecodeOptions])
    print(f"decoded {len(decoded)} utterances of {args.split} into {out}")
    return 0


def _read_jsonl(path: Path) -> Dict[str, dict]:
    if not path.exists():
        raise ParseError(f"{path} not found; run decode first")
    recs = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}: {exc.msg}", line=n) from None
                recs[rec["utt_id"]] = rec
    return recs


def cmd_eval(args) -> int:
    import csv

    from .metrics import accent_accuracy, corpus_error_rate, per_phoneme_report, \
        write_accent_csv, write_phoneme_csv
    from .training import ctc_lexicon, evaluate

    vals = _values(args)
    opts = C.decode_options(vals)
    corpus = load_corpus(args.data)
    run = Path(args.run)
    utts = _split(corpus, args.split)
    decoded = _read_jsonl(run / f"decode-{args.split}.jsonl")
    accents = _read_jsonl(run / f"accent-{args.split}.jsonl")
    missing = [u.utt_id for u in utts if u.utt_id not in decoded or u.utt_id not in accents]
    if missing:
        raise ParseError(f"decode output lacks {len(missing)} utterances, e.g. {missing[0]}")
    model = _load_run(run, corpus)
    clex = ctc_lexicon(corpus.lexicon, model.cfg.units)
    greedy = evaluate(model, utts, corpus.lexicon, opts.batch_size)

    refs_c = [list(u.y_c) for u in utts]
    hyps_c = [decoded[u.utt_id]["best"] for u in utts]
    labels = [u.accent for u in utts]
    acc = accent_accuracy([accents[u.utt_id]["argmax"] for u in utts], labels)
    refs_f = [clex.expand_ids(u.y_c) for u in utts]
    wer = corpus_error_rate(refs_c, hyps_c)
    per = corpus_error_rate(refs_f, greedy.hyps_f)

    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"eval-{args.split}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, value in (("wer", wer), ("per", per), ("ar_acc", acc.accuracy),
                            ("n_utterances", len(utts))):
            w.writerow([name, value if isinstance(value, int) else f"{value:.6f}"])
    write_accent_csv(out / f"accent-{args.split}.csv", acc)
    expansions = {c: clex.expand_ids([c]) for c in set(t for r in refs_c for t in r)}
    report = per_phoneme_report(refs_f, greedy.hyps_f, labels, opts.top_k,
                                refs_c, hyps_c, expansions)
    write_phoneme_csv(out / f"phoneme-{args.split}.csv", report, clex.inventory.fine.tokens)
    _freeze(out / f"eval-{args.split}.config.txt", vals, [C.DecodeOptions])
    print(f"{args.split}: wer={wer:.4f} per={per:.4f} ar_acc={acc.accuracy:.4f}")
    return 0


def _parse_axis(text: str):
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not raw.strip():
        raise ConfigError(f"--axis expects key=v1,v2, got {text!r}")
    if key not in C.SETTINGS:
        raise C.unknown_key(key)
    setting = C.SETTINGS[key]
    if key not in {f.name for f in fields(TrainConfig)}:
        raise ConfigError(f"{key!r} is not a training key and cannot be ablated")
    if setting.kind.startswith(("ints", "floats")):
        parts = raw.split(";")
    else:
        parts = raw.split(",")
    return key, [C.parse_value(setting, p) for p in parts]


def cmd_ablate(args) -> int:
    from .training import run_ablation

    vals = _values(args)
    base = C.train_config(vals)
    axes = dict(_parse_axis(a) for a in args.axis)
    if not axes:
        raise ConfigError("ablate needs at least one --axis key=v1,v2")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    corpus = load_corpus(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _freeze(out / "config.txt", vals, [TrainConfig])
    (out / "axes.txt").write_text("".join(f"{a}\n" for a in args.axis) + f"seeds = {args.seeds}\n",
                                  encoding="utf-8")
    rows = run_ablation(corpus, base, axes, seeds, out_csv=out / "ablation.csv")
    for row in rows:
        point = " ".join(f"{k}={v}" for k, v in row.axes.items())
        seeds_txt = "; ".join(f"ar={r['dev_ar_acc']:.4f} wer={r['dev_wer']:.4f}"
                              for r in row.per_seed)
        print(f"{point}: dev_ar_acc={row.mean('dev_ar_acc'):.4f} "
              f"dev_wer={row.mean('dev_wer'):.4f} [{seeds_txt}]")
    return 0


def cmd_grad_check(args) -> int:
    from .gradsuite import run_all

    results = run_all(args.seed)
    for name, err in results.items():
        print(f"{name:28s} {err:.3e}")
    worst = max(results.values())
    print(f"max relative error {worst:.3e}")
    if worst > GRAD_TOLERANCE:
        print(f"error: gradient check above {GRAD_TOLERANCE:g}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dimnet-toy", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, func, help_text, keys=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        if keys:
            p.add_argument("--config", help="key = value file; flags override it")
            C.add_flags(p)
        return p

    p = command("gen-data", cmd_gen_data, "generate a synthetic accented corpus")
    p.add_argument("--out", required=True, help="corpus directory to write")
    p.add_argument("--external-features", action="store_true",
                   help="store frames as .npy files instead of inline")

    p = command("train", cmd_train, "train a model on a generated corpus")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="run directory to write")
    p.add_argument("--no-eval", action="store_true", help="skip per-epoch dev evaluation")

    p = command("decode", cmd_decode, "two-pass decoding of one split")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--run", required=True, help="run directory holding checkpoint.pt")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.add_argument("--first-pass-only", action="store_true",
                   help="skip rescoring and keep the attention beam ranking")

    p = command("eval", cmd_eval, "score decode output and write metric CSVs")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--run", required=True, help="run directory with decode output")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="output directory (default: the run directory)")

    p = command("ablate", cmd_ablate, "train a grid of configurations over several seeds")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="directory for ablation.csv")
    p.add_argument("--axis", action="append", default=[],
                   help="key=v1,v2 (tuple-valued keys separate values with ';'); repeatable")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")

    p = command("grad-check", cmd_grad_check, "finite-difference gradient suite", keys=False)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (DimnetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

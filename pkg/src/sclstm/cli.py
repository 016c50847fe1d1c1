"""Command-line entry point: synth, train, generate, eval, gradcheck.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import corpusgen
from .da_core import (
    DAParseError, Ontology, Vocabulary, encode_da, lexicalise, load_corpus, load_ontology,
    parse_da, preset_ontology, write_corpus,
)
from .decoder import DecodeConfig, rerank
from .evaluator import evaluate_knn, evaluate_model, mean_report
from .numkit import make_rng
from .sclstm_net import GATING_MODES, NumericError, gradcheck, load_model, save_model
from .trainer import SPLIT_KEYS, DivergenceError, SplitCorpus, TrainConfig, make_net_config, split_corpus, train

log = logging.getLogger("sclstm")


class UsageError(Exception):
    """Bad flags or unreadable input; maps to exit code 2."""


# ----------------------------------------------------------------------
# shared helpers
# ----------------------------------------------------------------------
def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _ontology(args) -> Ontology:
    if getattr(args, "ontology", None):
        return load_ontology(_existing(args.ontology))
    return preset_ontology(args.domain)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_items(path: str, ont: Ontology):
    try:
        return load_corpus(_existing(path), ont)
    except (DAParseError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}")


def _split(items, ont: Ontology, args) -> tuple[SplitCorpus, dict]:
    split = split_corpus(items, seed=args.split_seed, ont=ont, group_by=args.split_by)
    if not split.train or not split.valid or not split.test:
        raise UsageError("corpus too small for a train/valid/test split")
    index = {id(it): i for i, it in enumerate(items)}
    return split, {name: [index[id(it)] for it in getattr(split, name)]
                   for name in ("train", "valid", "test")}


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, default=80, help="hidden units per layer")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--dropout", type=float, default=None,
                   help="dropout rate for deep nets (default 0.5 when --layers > 1, else 0)")
    p.add_argument("--gating", choices=GATING_MODES, default="learned")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-5)
    p.add_argument("--no-upsample", action="store_true")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--split-by", choices=SPLIT_KEYS, default="form",
                   help="keep identical delexicalised sentences ('form') or whole DAs ('da') in one split")


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-overgen", type=int, default=20)
    p.add_argument("--n-best", type=int, default=5)
    p.add_argument("--lambda", dest="lam", type=float, default=100.0)
    p.add_argument("--max-len", type=int, default=60)


def _decode_cfg(args) -> DecodeConfig:
    try:
        return DecodeConfig(args.n_overgen, args.n_best, args.lam, args.max_len)
    except ValueError as exc:
        raise UsageError(str(exc))


def _train_seed(args, split: SplitCorpus, vocab: Vocabulary, ont: Ontology, seed: int, log_fh=None):
    dropout = args.dropout if args.dropout is not None else (0.5 if args.layers > 1 else 0.0)
    try:
        net_cfg = make_net_config(vocab, ont, hidden_size=args.hidden, num_layers=args.layers,
                                  dropout=dropout, gating_mode=args.gating)
        cfg = TrainConfig(learning_rate=args.lr, l2_coeff=args.l2, max_epochs=args.epochs,
                          patience=args.patience, seed=seed, upsample=not args.no_upsample)
    except ValueError as exc:
        raise UsageError(str(exc))

    def on_epoch(rec):
        line = (f"seed {seed} epoch {rec['epoch']} train {rec['train_cost']:.4f} "
                f"valid {rec['valid_cost']:.4f} lr {rec['lr']:.6g}")
        print(line, file=sys.stderr)
        if log_fh is not None:
            log_fh.write(line + "\n")

    return train(split, vocab, ont, net_cfg, cfg, on_epoch=on_epoch)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_synth(args) -> int:
    ont = _ontology(args)
    try:
        templates = (corpusgen.load_templates(_existing(args.templates)) if args.templates
                     else corpusgen.preset_templates(args.domain))
        values = (corpusgen.load_values(_existing(args.values)) if args.values
                  else corpusgen.preset_values(args.domain))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read templates: {exc}")
    try:
        records = corpusgen.synth_corpus(ont, templates, values, args.n, make_rng(args.seed), args.noise)
    except ValueError as exc:
        raise UsageError(str(exc))
    write_corpus(args.out, records)
    stats = corpusgen.corpus_stats([parse_da(r["da"], ont) for r in records])
    Path(str(args.out) + ".stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n",
                                                   encoding="utf-8")
    print(f"wrote {len(records)} sentences to {args.out}: {stats['distinct_das']} distinct DAs, "
          f"{stats['mean_slots_per_da']:.3f} slots/DA")
    return 0


def cmd_train(args) -> int:
    ont = _ontology(args)
    corpus_path = _existing(args.corpus)
    items = _load_items(args.corpus, ont)
    split, indices = _split(items, ont, args)
    vocab = Vocabulary.build([it[1] for it in split.train], ont)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"corpus_sha256": _file_digest(corpus_path), "split_seed": args.split_seed,
            "split_by": args.split_by,
            "ontology": ont.to_dict(), "vocab": vocab.tokens, "split": indices}
    (out / "split.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    for seed in args.seeds:
        run_dir = out / f"seed{seed}"
        run_dir.mkdir(exist_ok=True)
        with open(run_dir / "train.log", "w", encoding="utf-8") as fh:
            fwd, bwd, history = _train_seed(args, split, vocab, ont, seed, fh)
        extra = {"vocab": vocab.tokens, "ontology": ont.to_dict(), "seed": seed,
                 "best_epoch": history.best_epoch, "history": history.epochs}
        save_model(run_dir / "forward.npz", fwd, extra)
        save_model(run_dir / "backward.npz", bwd, extra)
        print(f"seed {seed}: best epoch {history.best_epoch}, valid cost {history.best_valid:.4f}")
    return 0


def _load_pair(model_dir: Path):
    try:
        fwd, extra = load_model(_existing(str(model_dir / "forward.npz")))
        bwd, _ = load_model(_existing(str(model_dir / "backward.npz")))
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load model from {model_dir}: {exc}")
    # the reranker shares the keyword detector with the generator
    bwd.blocks["W_wr"] = fwd.blocks["W_wr"]
    vocab = Vocabulary(extra["vocab"])
    ont = Ontology.from_dict(extra["ontology"])
    if len(vocab) != fwd.config.vocab_size or ont.dimension != fwd.config.da_dim:
        raise UsageError(f"{model_dir}: vocabulary or ontology does not match the network")
    return fwd, bwd, vocab, ont


def cmd_generate(args) -> int:
    model_dir = Path(args.model_dir)
    fwd, bwd, vocab, ont = _load_pair(model_dir)
    cfg = _decode_cfg(args)
    rng = make_rng(args.seed)
    src = open(_existing(args.input), encoding="utf-8") if args.input else sys.stdin
    failures = 0
    with src:
        for lineno, line in enumerate(src, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                da = parse_da(line, ont)
            except DAParseError as exc:
                print(f"line {lineno}: {exc}", file=sys.stderr)
                failures += 1
                continue
            for c in rerank(fwd, bwd, vocab, encode_da(da, ont), da, cfg, rng):
                text = lexicalise(c.tokens, da)
                sys.stdout.write(f"{lineno}\t{text}\t{c.score:.6f}\t{c.f_cost:.6f}\t"
                                 f"{c.b_cost:.6f}\t{c.err:.6f}\n")
    return 2 if failures else 0


def _format_metrics(label: str, m: dict) -> str:
    return (f"{label}\tbleu4 {m['bleu4']:.4f}\tbleu4_top5 {m['bleu4_top5']:.4f}\t"
            f"err_percent {m['err_percent']:.4f}")


def cmd_eval(args) -> int:
    ont = _ontology(args)
    corpus_path = _existing(args.corpus)
    items = _load_items(args.corpus, ont)
    if args.model_dir:
        meta_path = Path(args.model_dir) / "split.json"
        meta = json.loads(_existing(str(meta_path)).read_text(encoding="utf-8"))
        if meta["corpus_sha256"] != _file_digest(corpus_path):
            raise UsageError(f"{args.corpus} is not the corpus the model in {args.model_dir} was trained on")
        split = SplitCorpus(*[[items[i] for i in meta["split"][k]] for k in ("train", "valid", "test")])
    else:
        split, _ = _split(items, ont, args)
    lines = [f"corpus\t{args.corpus}", f"test_das\t{len(split.test)}"]
    if args.baseline == "knn":
        rep = evaluate_knn(split.train, ont, split.test, items)
        lines.append(_format_metrics("knn", rep.metrics()))
        print("\n".join(lines))
        return 0
    cfg = _decode_cfg(args)
    reports = []
    for seed in args.seeds:
        if args.model_dir:
            fwd, bwd, vocab, model_ont = _load_pair(Path(args.model_dir) / f"seed{seed}")
            if model_ont.to_dict() != ont.to_dict() or vocab.tokens != meta["vocab"]:
                raise UsageError(f"model seed{seed} does not match the corpus vocabulary or ontology")
        else:
            vocab = Vocabulary.build([it[1] for it in split.train], ont)
            fwd, bwd, _ = _train_seed(args, split, vocab, ont, seed)
        rep = evaluate_model(fwd, bwd, vocab, ont, split.test, items, cfg, make_rng(args.decode_seed + seed))
        reports.append(rep)
        lines.append(_format_metrics(f"seed {seed}", rep.metrics()))
    lines.append(_format_metrics("mean", mean_report(reports)))
    print("\n".join(lines))
    return 0


def cmd_gradcheck(args) -> int:
    reports = gradcheck(args.seed, hidden_size=args.hidden, da_dim=args.da_dim,
                        vocab_size=args.vocab, length=args.length, h=args.step)
    worst = 0.0
    for rep in reports:
        print(f"{rep.label}\tmax_rel_error {rep.max_error:.3e}")
        worst = max(worst, rep.max_error)
    print(f"worst\t{worst:.3e}\t{'ok' if worst < args.tol else 'FAIL'}")
    return 0 if worst < args.tol else 1


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sclstm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def domain_flags(p):
        p.add_argument("--domain", choices=("restaurant", "hotel"), default="restaurant")
        p.add_argument("--ontology", help="ontology JSON file (overrides --domain)")

    p = sub.add_parser("synth", help="synthesise a corpus from templates")
    domain_flags(p)
    p.add_argument("--templates")
    p.add_argument("--values")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train forward and backward networks per seed")
    domain_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", type=_seed_list, default=[1])
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="over-generate and rerank realisations for DAs")
    p.add_argument("--model-dir", required=True, help="directory with forward.npz and backward.npz")
    p.add_argument("--input", help="file with one DA per line (default stdin)")
    p.add_argument("--seed", type=int, default=1)
    _add_decode_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="BLEU-4 and slot error rate on the test split")
    domain_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model-dir", help="output of 'train'; trains in-process when omitted")
    p.add_argument("--baseline", choices=("knn",))
    p.add_argument("--seeds", type=_seed_list, default=[1, 2, 3, 4, 5])
    p.add_argument("--decode-seed", type=int, default=1000)
    _add_model_flags(p)
    _add_decode_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=6)
    p.add_argument("--da-dim", type=int, default=9)
    p.add_argument("--vocab", type=int, default=12)
    p.add_argument("--length", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

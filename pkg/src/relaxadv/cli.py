"""Command-line entry point: ``relaxadv <verb> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .errors import ConfigError, RelaxAdvError
from .metrics import ASR_THRESHOLDS, CorpusSummary, aggregate, format_table
from .config import RunConfig, load_config, with_overrides
from .models import CausalLm, NmtModel, lm_nll, save_checkpoint, train
from .runner import (attack_corpus, build_synthetic, heldout_bleu, load_corpus_dir, load_model, read_jsonl,
                     replacement_corpus, reports_from_records, write_corpus_dir, write_jsonl)
from .text import TASKS


def _path(flag: str | None, configured: str, name: str) -> str:
    value = flag or configured
    if not value:
        raise ConfigError(f"no {name} given (use --{name} or [paths] {name} in the config)")
    return value


def _emit_summary(out: Path, rows: dict[str, CorpusSummary], cfg: RunConfig) -> None:
    table = format_table(rows)
    print(table)
    out.with_suffix(".summary.txt").write_text(table + "\n", encoding="utf-8")
    payload = {"config_hash": cfg.digest(), "config": cfg.to_dict(),
               "summaries": {name: asdict(s) for name, s in rows.items()}}
    out.with_suffix(".summary.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                                                encoding="utf-8")


def _test_split(args, cfg: RunConfig):
    cdir = load_corpus_dir(_path(args.corpus, cfg.paths.corpus, "corpus"), cfg.model.max_len)
    return cdir, cdir.test.subset(args.limit)


# ------------------------------------------------------------------ verbs


def cmd_make_corpus(args, cfg: RunConfig) -> None:
    c = with_overrides(cfg, "corpus", seed=args.seed).corpus
    if c.task not in TASKS:
        raise ConfigError(f"unknown task {c.task!r}; valid tasks: {', '.join(TASKS)}")
    vocab, tr, te = build_synthetic(c.task, c.vocab_size, c.n_train, c.n_test, (c.min_tokens, c.max_tokens),
                                    c.seed, cfg.model.max_len)
    counts = write_corpus_dir(args.out, vocab, tr, te)
    print(f"wrote {counts['train']} train and {counts['test']} test pairs, "
          f"{len(vocab)} vocabulary entries to {args.out}")


def cmd_train(args, cfg: RunConfig) -> None:
    cfg = with_overrides(cfg, "train", seed=args.seed, epochs=args.epochs)
    cdir = load_corpus_dir(_path(args.corpus, cfg.paths.corpus, "corpus"), cfg.model.max_len)
    settings = {"nmt": cfg.model, "lm": cfg.lm, "target": cfg.target}[args.kind]
    cls = CausalLm if args.kind == "lm" else NmtModel
    model_cfg = settings.model_config(len(cdir.vocab))
    if args.resume:
        model = load_model(args.resume, cdir.vocab, cls.kind)
        if model.config != model_cfg:
            raise ConfigError(f"checkpoint config {model.config} differs from configured {model_cfg}")
    else:
        model = cls(model_cfg, seed=settings.seed)
    model.vocab = cdir.vocab
    heldout = cdir.test.subset(args.eval_limit)

    def evaluate_epoch(epoch: int, loss: float) -> float:
        if isinstance(model, NmtModel):
            score = heldout_bleu(model, heldout)
        else:
            score = sum(lm_nll(model, e.source) for e in heldout.examples) / len(heldout)
        print(f"epoch {epoch}: loss {loss:.4f} heldout {score:.4f}", flush=True)
        return score

    result = train(model, cdir.train, cfg.train.epochs, cfg.train.lr, cfg.train.seed,
                   cfg.train.batch_size, on_epoch=evaluate_epoch)
    out = Path(args.out)
    save_checkpoint(model, out)
    metric = "heldout_bleu" if isinstance(model, NmtModel) else "heldout_nll"
    buf = io.StringIO()
    buf.write(f"# config_hash={cfg.digest()} config={json.dumps(cfg.to_dict(), sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss", metric])
    for i, (loss, score) in enumerate(zip(result.losses, result.evaluations), 1):
        writer.writerow([i, repr(loss), repr(score)])
    out.with_suffix(".csv").write_text(buf.getvalue(), encoding="utf-8")
    print(f"saved {args.kind} checkpoint to {out}")


def _attack_config(args, cfg: RunConfig):
    cfg = with_overrides(cfg, "attack", seed=args.seed, alpha=getattr(args, "alpha", None))
    return cfg, cfg.attack


def cmd_attack(args, cfg: RunConfig) -> None:
    cfg, acfg = _attack_config(args, cfg)
    cdir, test = _test_split(args, cfg)
    f = load_model(_path(args.nmt, cfg.paths.nmt, "nmt"), cdir.vocab, "nmt")
    g = load_model(_path(args.lm, cfg.paths.lm, "lm"), cdir.vocab, "lm")
    outcomes = attack_corpus(test, f, g, cdir.idf, cdir.vocab, acfg, threads=args.threads)
    out = Path(args.out)
    write_jsonl(out, outcomes, cdir.vocab, asdict(acfg), cfg.digest(), acfg.seed, "relaxed")
    _emit_summary(out, {"relaxed": aggregate([o.report for o in outcomes])}, cfg)


def cmd_transfer(args, cfg: RunConfig) -> None:
    cfg, acfg = _attack_config(args, cfg)
    cdir, test = _test_split(args, cfg)
    f_ref = load_model(_path(args.ref, cfg.paths.nmt, "ref"), cdir.vocab, "nmt")
    f_target = load_model(_path(args.target, cfg.paths.target, "target"), cdir.vocab, "nmt")
    g = load_model(_path(args.lm, cfg.paths.lm, "lm"), cdir.vocab, "lm")
    outcomes = attack_corpus(test, f_ref, g, cdir.idf, cdir.vocab, acfg, threads=args.threads, f_target=f_target)
    out = Path(args.out)
    write_jsonl(out, outcomes, cdir.vocab, asdict(acfg), cfg.digest(), acfg.seed, "transfer")
    rows = {"transfer": aggregate([o.report for o in outcomes], [o.queries for o in outcomes])}
    if args.random_baseline:
        budgets = [o.changed for o in outcomes]
        rand = replacement_corpus(test, f_target, g, cdir.idf, cdir.vocab, budgets, "random",
                                  seed=acfg.seed, threads=args.threads)
        write_jsonl(out.with_suffix(".random.jsonl"), rand, cdir.vocab, asdict(acfg), cfg.digest(),
                    acfg.seed, "random")
        rows["random (TER-matched)"] = aggregate([o.report for o in rand], [o.queries for o in rand])
    _emit_summary(out, rows, cfg)


def cmd_baseline_knn(args, cfg: RunConfig) -> None:
    cfg = with_overrides(cfg, "attack", seed=args.seed)
    cdir, test = _test_split(args, cfg)
    f = load_model(_path(args.nmt, cfg.paths.nmt, "nmt"), cdir.vocab, "nmt")
    g = load_model(_path(args.lm, cfg.paths.lm, "lm"), cdir.vocab, "lm")
    if args.match is not None:
        by_index = {r["index"]: r["changed"] for r in read_jsonl(args.match)}
        missing = [i for i in range(len(test)) if i not in by_index]
        if missing:
            raise ConfigError(f"{args.match} has no result for sentence {missing[0]}")
        budgets = [by_index[i] for i in range(len(test))]
    elif args.n_replace is not None:
        budgets = [args.n_replace] * len(test)
    else:
        raise ConfigError("baseline-knn needs --n-replace or --match")
    outcomes = replacement_corpus(test, f, g, cdir.idf, cdir.vocab, budgets, "knn", threads=args.threads)
    out = Path(args.out)
    write_jsonl(out, outcomes, cdir.vocab, {"n_replace": budgets}, cfg.digest(), cfg.attack.seed, "knn")
    _emit_summary(out, {"kNN": aggregate([o.report for o in outcomes])}, cfg)


def cmd_sweep_alpha(args, cfg: RunConfig) -> None:
    cfg = with_overrides(cfg, "attack", seed=args.seed)
    alphas = args.alphas if args.alphas is not None else list(cfg.sweep.alphas)
    if not alphas:
        raise ConfigError("sweep-alpha needs at least one alpha")
    cdir, test = _test_split(args, cfg)
    f = load_model(_path(args.nmt, cfg.paths.nmt, "nmt"), cdir.vocab, "nmt")
    g = load_model(_path(args.lm, cfg.paths.lm, "lm"), cdir.vocab, "lm")
    buf = io.StringIO()
    buf.write(f"# config_hash={cfg.digest()} config={json.dumps(cfg.to_dict(), sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha", *[f"asr_{t:.1f}" for t in ASR_THRESHOLDS], "rdbleu", "similarity"])
    for alpha in alphas:
        acfg = with_overrides(cfg, "attack", alpha=alpha).attack
        outcomes = attack_corpus(test, f, g, cdir.idf, cdir.vocab, acfg, threads=args.threads)
        s = aggregate([o.report for o in outcomes])
        writer.writerow([repr(alpha), *[repr(s.asr_at[f"{t:.1f}"]) for t in ASR_THRESHOLDS],
                         repr(s.rdbleu), repr(s.similarity)])
        print(f"alpha={alpha:g}: ASR {s.asr:.2f}  RDBLEU {s.rdbleu:.3f}  Sim. {s.similarity:.3f}  "
              f"TER {s.ter:.2f}", flush=True)
    Path(args.out).write_text(buf.getvalue(), encoding="utf-8")


def cmd_report(args, cfg: RunConfig) -> None:
    rows = {}
    for path in args.results:
        records = read_jsonl(path)
        if args.limit is not None:
            records = records[:args.limit]
        if not records:
            raise ConfigError(f"{path} contains no results")
        queries = [r.get("queries", 0) for r in records]
        name = records[0].get("method", Path(path).stem)
        if name in rows:
            name = f"{name} ({Path(path).name})"
        rows[name] = aggregate(reports_from_records(records), queries if records[0].get("method") == "transfer"
                               else None)
    print(format_table(rows))
    if args.json:
        print(json.dumps({k: asdict(v) for k, v in rows.items()}, sort_keys=True))


# ------------------------------------------------------------------ parser


def _alphas(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid alpha list {text!r}") from None


def _global_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI-style run configuration")
    parser.add_argument("--seed", type=int, help="override the seed used by this command")
    parser.add_argument("--limit", type=int, help="only process the first N test sentences")
    parser.add_argument("--threads", type=int, help="sentence-level worker threads (default 1)")


def build_parser() -> argparse.ArgumentParser:
    # Flags are accepted before or after the verb. The verb's copy defaults to
    # SUPPRESS so it never resets a value given before the verb; each parser
    # gets its own actions because set_defaults mutates shared ones.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _global_flags(common)

    parser = argparse.ArgumentParser(prog="relaxadv", description=__doc__)
    _global_flags(parser)
    parser.set_defaults(threads=1)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("make-corpus", parents=[common], help="write a synthetic parallel corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("train", parents=[common], help="train a translator or language model")
    p.add_argument("--kind", choices=("nmt", "lm", "target"), default="nmt")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume")
    p.add_argument("--eval-limit", type=int, default=100)
    p.set_defaults(func=cmd_train)

    def attack_inputs(p):
        p.add_argument("--corpus")
        p.add_argument("--lm")
        p.add_argument("--out", required=True)

    p = sub.add_parser("attack", parents=[common], help="white-box attack on the test split")
    attack_inputs(p)
    p.add_argument("--nmt")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("transfer", parents=[common], help="black-box transfer attack")
    attack_inputs(p)
    p.add_argument("--ref")
    p.add_argument("--target")
    p.add_argument("--alpha", type=float)
    p.add_argument("--random-baseline", action="store_true",
                   help="also score random replacement with the same per-sentence budget")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("sweep-alpha", parents=[common], help="attack at several alphas, write a CSV")
    attack_inputs(p)
    p.add_argument("--nmt")
    p.add_argument("--alphas", type=_alphas)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("baseline-knn", parents=[common], help="gradient-ranked nearest-neighbour baseline")
    attack_inputs(p)
    p.add_argument("--nmt")
    p.add_argument("--n-replace", type=int)
    p.add_argument("--match", help="attack JSONL whose per-sentence change counts set the budget")
    p.set_defaults(func=cmd_baseline_knn)

    p = sub.add_parser("report", parents=[common], help="summary table from result JSONL files")
    p.add_argument("results", nargs="+")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (RelaxAdvError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"relaxadv {args.verb}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

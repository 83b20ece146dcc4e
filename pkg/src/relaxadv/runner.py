"""Corpus-level experiment plumbing shared by the CLI and the acceptance suite."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .attack import (AttackConfig, AttackResult, attack_blackbox, attack_whitebox, check_same_vocabulary,
                     knn_baseline, n_changed, random_replacement)
from .errors import ConfigError, FormatError
from .metrics import MetricReport, bleu, evaluate
from .models import CausalLm, NmtModel, load_checkpoint, translate_batch
from .text import (Corpus, IdfTable, Vocabulary, idf_from_corpus, load_parallel_text, load_permutation,
                   make_synthetic_corpus, save_permutation, synthetic_vocabulary)

SPLITS = ("train", "test")


# ------------------------------------------------------------------ corpus dirs


def write_corpus_dir(out_dir: str | Path, vocab: Vocabulary, train: Corpus, test: Corpus) -> dict[str, int]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, part in (("train", train), ("test", test)):
        (out / f"{name}.src").write_text("".join(s + "\n" for s in part.source_lines), encoding="utf-8")
        (out / f"{name}.ref").write_text("".join(s + "\n" for s in part.reference_lines), encoding="utf-8")
        counts[name] = len(part)
    vocab.save(out / "vocab.txt")
    if train.permutation is not None:
        save_permutation(train.permutation, out / "permutation.txt")
    return counts


def build_synthetic(task: str, vocab_size: int, n_train: int, n_test: int, len_range: tuple[int, int],
                    seed: int, max_len: int = 32) -> tuple[Vocabulary, Corpus, Corpus]:
    vocab = synthetic_vocabulary(vocab_size)
    corpus = make_synthetic_corpus(task, n_train + n_test, len_range, vocab, seed, max_len)
    train, test = corpus.split(n_train)
    return vocab, train, test


@dataclass
class CorpusDir:
    vocab: Vocabulary
    train: Corpus
    test: Corpus
    permutation: dict[str, str] | None

    @property
    def idf(self) -> IdfTable:
        return idf_from_corpus(self.train, len(self.vocab))


def load_corpus_dir(path: str | Path, max_len: int = 32) -> CorpusDir:
    path = Path(path)
    if not (path / "vocab.txt").is_file():
        raise FormatError(f"{path} has no vocab.txt; run make-corpus first")
    vocab = Vocabulary.load(path / "vocab.txt")
    splits = {s: load_parallel_text(path / f"{s}.src", path / f"{s}.ref", vocab, max_len) for s in SPLITS}
    perm = load_permutation(path / "permutation.txt") if (path / "permutation.txt").is_file() else None
    return CorpusDir(vocab, splits["train"], splits["test"], perm)


def load_model(path: str | Path, vocab: Vocabulary, kind: str):
    model = load_checkpoint(path)
    if model.kind != kind:
        raise ConfigError(f"{path} holds a {model.kind!r} model, expected {kind!r}")
    if model.config.vocab_size != len(vocab):
        raise ConfigError(f"{path} was trained with vocabulary size {model.config.vocab_size}, "
                          f"corpus vocabulary has {len(vocab)}")
    model.vocab = vocab
    return model


def heldout_bleu(f: NmtModel, corpus: Corpus, limit: int | None = None) -> float:
    examples = corpus.examples[:limit]
    outs = translate_batch(f, [e.source for e in examples])
    return float(np.mean([bleu(o, e.reference) for o, e in zip(outs, examples)]))


# ------------------------------------------------------------------ records


@dataclass
class SentenceOutcome:
    index: int
    original: tuple[int, ...]
    adversarial: tuple[int, ...]
    reference: tuple[int, ...]
    translation_clean: list[int]
    translation_adv: list[int]
    report: MetricReport
    queries: int = 0
    n_candidates: int = 0
    trace: dict[str, list[float]] | None = None

    @property
    def changed(self) -> int:
        return n_changed(self.original, self.adversarial)

    def to_record(self, vocab: Vocabulary, config: dict, config_hash: str, seed: int, method: str) -> dict:
        return {
            "index": self.index,
            "method": method,
            "original": vocab.decode(self.original),
            "adversarial": vocab.decode(self.adversarial),
            "reference": vocab.decode(self.reference),
            "translation_clean": vocab.decode(self.translation_clean),
            "translation_adv": vocab.decode(self.translation_adv),
            "changed": self.changed,
            "metrics": self.report.to_dict(),
            "n_candidates": self.n_candidates,
            "queries": self.queries,
            "trace": self.trace,
            "seed": seed,
            "config_hash": config_hash,
            "config": config,
        }


def _trace_arrays(result: AttackResult) -> dict[str, list[float]]:
    return {
        "adv": [t.adv for t in result.trace],
        "sim": [t.sim for t in result.trace],
        "total": [t.total for t in result.trace],
    }


def sentence_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, sentence index, stream); order of execution is irrelevant."""
    return np.random.default_rng([seed, index, stream])


def _parallel_map(fn: Callable[[int], SentenceOutcome], n: int, threads: int) -> list[SentenceOutcome]:
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def attack_corpus(corpus: Corpus, f: NmtModel, g: CausalLm, idf: IdfTable, vocab: Vocabulary,
                  cfg: AttackConfig, threads: int = 1, f_target: NmtModel | None = None) -> list[SentenceOutcome]:
    """White-box attack on every sentence (black-box when ``f_target`` is given)."""
    if f_target is not None:
        check_same_vocabulary(f, f_target)
    victim = f if f_target is None else f_target

    def one(i: int) -> SentenceOutcome:
        ex = corpus.examples[i]
        rng = sentence_rng(cfg.seed, i)
        if f_target is None:
            res = attack_whitebox(ex.source, ex.reference, f, g, idf, cfg, rng=rng)
        else:
            res = attack_blackbox(ex.source, ex.reference, f, g, idf, cfg, f_target, rng=rng)
        clean = translate_batch(victim, [ex.source])[0]
        report = evaluate(ex.source, res.adversarial, ex.reference, victim, g, idf, vocab,
                          translations=(clean, res.translation_adv))
        return SentenceOutcome(i, res.original, res.adversarial, res.reference, clean, res.translation_adv,
                               report, res.queries, len(res.candidates), _trace_arrays(res))

    return _parallel_map(one, len(corpus), threads)


def replacement_corpus(corpus: Corpus, f: NmtModel, g: CausalLm, idf: IdfTable, vocab: Vocabulary,
                       budgets: Sequence[int], method: str, seed: int = 0,
                       threads: int = 1) -> list[SentenceOutcome]:
    """kNN or random replacement with a per-sentence number of substitutions."""
    if method not in ("knn", "random"):
        raise ConfigError(f"unknown baseline {method!r}")
    if len(budgets) != len(corpus):
        raise ConfigError(f"{len(budgets)} budgets for {len(corpus)} sentences")

    def one(i: int) -> SentenceOutcome:
        ex = corpus.examples[i]
        if method == "knn":
            adv = knn_baseline(ex.source, ex.reference, f, budgets[i])
        else:
            adv = random_replacement(ex.source, budgets[i], f.config.vocab_size, sentence_rng(seed, i, 1))
        clean, out = translate_batch(f, [ex.source, adv])
        report = evaluate(ex.source, adv, ex.reference, f, g, idf, vocab, translations=(clean, out))
        return SentenceOutcome(i, tuple(ex.source), adv, tuple(ex.reference), clean, out, report, queries=1,
                               n_candidates=1)

    return _parallel_map(one, len(corpus), threads)


def write_jsonl(path: str | Path, outcomes: Sequence[SentenceOutcome], vocab: Vocabulary, config: dict,
                config_hash: str, seed: int, method: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_record(vocab, config, config_hash, seed, method), sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{n}: {exc.msg}") from None
    return records


def reports_from_records(records: Sequence[dict]) -> list[MetricReport]:
    try:
        return [MetricReport(**r["metrics"]) for r in records]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"result line lacks metrics: {exc}") from None

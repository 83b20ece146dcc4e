"""Shared vocabulary, tokenizer, idf weights and parallel corpora."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")
N_SPECIAL = len(SPECIAL_TOKENS)

TASKS = ("copy", "cipher")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace, isolating punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(tokenize(text))


class Vocabulary:
    """Bijective token <-> id map with four reserved ids (PAD, BOS, EOS, UNK)."""

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(SPECIAL_TOKENS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                raise ConfigError(f"duplicate vocabulary entry {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    @classmethod
    def build(cls, lines: Iterable[str], max_size: int | None = None) -> Vocabulary:
        """Order tokens by descending frequency, ties broken lexicographically."""
        counts = Counter(tok for line in lines for tok in tokenize(line))
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        ranked = [t for t in ranked if t not in SPECIAL_TOKENS]
        if max_size is not None:
            ranked = ranked[: max(0, max_size - N_SPECIAL)]
        return cls(ranked)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    @property
    def content_ids(self) -> np.ndarray:
        return np.arange(N_SPECIAL, len(self.itos))

    def encode(self, text: str, add_specials: bool = True) -> list[int]:
        ids = [self.stoi.get(t, UNK) for t in tokenize(text)]
        return [BOS, *ids, EOS] if add_specials else ids

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.itos[i] for i in ids if i >= N_SPECIAL or i == UNK)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos[N_SPECIAL:]), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    return vocab.decode(ids)


def strip_specials(ids: Iterable[int]) -> list[int]:
    return [int(i) for i in ids if i >= N_SPECIAL or i == UNK]


def is_special(token_id: int) -> bool:
    return token_id < N_SPECIAL and token_id != UNK


@dataclass(frozen=True)
class IdfTable:
    weights: np.ndarray
    n_documents: int

    def __getitem__(self, token_id: int) -> float:
        return float(self.weights[token_id])

    def lookup(self, ids: Sequence[int]) -> np.ndarray:
        return self.weights[np.asarray(ids, dtype=np.int64)]


def compute_idf(documents: Sequence[Sequence[int]], vocab_size: int) -> IdfTable:
    """w_i = ln((N + 1) / (df_i + 1)); special tokens (and UNK) get weight 0."""
    if not documents:
        raise ConfigError("idf needs at least one document")
    df = np.zeros(vocab_size)
    for doc in documents:
        df[np.unique(np.asarray(doc, dtype=np.int64))] += 1
    n = len(documents)
    weights = np.log((n + 1) / (df + 1))
    weights[:N_SPECIAL] = 0.0
    return IdfTable(weights=weights, n_documents=n)


@dataclass(frozen=True)
class ParallelExample:
    source: tuple[int, ...]
    reference: tuple[int, ...]


@dataclass
class Corpus:
    examples: list[ParallelExample]
    source_lines: list[str]
    reference_lines: list[str]
    permutation: dict[str, str] | None = None
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.examples)

    def split(self, n_first: int) -> tuple[Corpus, Corpus]:
        def part(sl):
            return Corpus(self.examples[sl], self.source_lines[sl], self.reference_lines[sl], self.permutation)
        return part(slice(0, n_first)), part(slice(n_first, None))

    def subset(self, limit: int | None) -> Corpus:
        return self if limit is None else self.split(limit)[0]


# ------------------------------------------------------------ synthetic data

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def synthetic_words(n: int) -> list[str]:
    """``n`` distinct pronounceable two-syllable words, in a fixed order."""
    syllables = [c + v for c in _ONSETS for v in _VOWELS]
    words = [a + b for a in syllables for b in syllables if a != b]
    if n > len(words):
        raise ConfigError(f"at most {len(words)} synthetic words available")
    step = 37
    return [words[(i * step) % len(words)] for i in range(n)]


def synthetic_vocabulary(vocab_size: int) -> Vocabulary:
    if vocab_size <= N_SPECIAL + 1:
        raise ConfigError(f"vocab_size must exceed {N_SPECIAL + 1}")
    return Vocabulary(synthetic_words(vocab_size - N_SPECIAL))


def _markov_language(n_tokens: int, rng: np.random.Generator, fanout: int = 5):
    """Zipfian start distribution and a sparse-ish random transition matrix."""
    ranks = rng.permutation(n_tokens) + 1
    start = 1.0 / ranks
    start /= start.sum()
    trans = np.full((n_tokens, n_tokens), 0.1 / n_tokens)
    for i in range(n_tokens):
        succ = rng.choice(n_tokens, size=fanout, replace=False, p=start)
        trans[i, succ] += 0.9 * rng.dirichlet(np.ones(fanout))
    trans /= trans.sum(axis=1, keepdims=True)
    return start, trans


def make_synthetic_corpus(task: str, n_sentences: int, len_range: tuple[int, int],
                          vocab: Vocabulary, seed: int, max_len: int = 32) -> Corpus:
    """Sample a synthetic language pair.

    Source sentences come from a seeded first-order Markov chain over the
    content tokens. ``copy`` pairs each sentence with itself; ``cipher`` maps
    every token through a fixed random permutation of the content tokens.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}")
    lo, hi = len_range
    if lo < 1 or hi < lo:
        raise ConfigError(f"invalid length range {len_range}")
    if hi > max_len - 2:
        raise ConfigError(f"sentence length {hi} exceeds max_len - 2 = {max_len - 2}")
    content = [vocab.itos[i] for i in vocab.content_ids]
    if len(content) < 2:
        raise ConfigError("vocabulary needs at least two content tokens")

    rng = np.random.default_rng(seed)
    start, trans = _markov_language(len(content), rng)
    permutation = None
    if task == "cipher":
        order = rng.permutation(len(content))
        permutation = {content[i]: content[j] for i, j in enumerate(order)}

    src_lines, ref_lines, examples = [], [], []
    for _ in range(n_sentences):
        length = int(rng.integers(lo, hi + 1))
        tok = int(rng.choice(len(content), p=start))
        words = [content[tok]]
        for _ in range(length - 1):
            tok = int(rng.choice(len(content), p=trans[tok]))
            words.append(content[tok])
        target = words if permutation is None else [permutation[w] for w in words]
        src, ref = " ".join(words), " ".join(target)
        src_lines.append(src)
        ref_lines.append(ref)
        examples.append(ParallelExample(tuple(vocab.encode(src)), tuple(vocab.encode(ref))))
    return Corpus(examples, src_lines, ref_lines, permutation)


# ------------------------------------------------------------ file handling


def load_parallel_text(src_path: str | Path, ref_path: str | Path, vocab: Vocabulary,
                       max_len: int = 32) -> Corpus:
    """Pair line ``i`` of both files; lines longer than ``max_len - 2`` tokens are skipped."""
    src = Path(src_path).read_text(encoding="utf-8").splitlines()
    ref = Path(ref_path).read_text(encoding="utf-8").splitlines()
    if len(src) != len(ref):
        raise FormatError(f"line count mismatch: {src_path} has {len(src)}, {ref_path} has {len(ref)}")
    examples, kept_src, kept_ref = [], [], []
    skipped = 0
    for s, r in zip(src, ref):
        s_ids, r_ids = vocab.encode(s), vocab.encode(r)
        if len(s_ids) > max_len or len(r_ids) > max_len:
            skipped += 1
            continue
        examples.append(ParallelExample(tuple(s_ids), tuple(r_ids)))
        kept_src.append(s)
        kept_ref.append(r)
    return Corpus(examples, kept_src, kept_ref, skipped=skipped)


def save_permutation(permutation: dict[str, str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{a} {b}\n" for a, b in permutation.items()), encoding="utf-8")


def load_permutation(path: str | Path) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{n}: expected two tokens, got {line!r}")
        pairs[parts[0]] = parts[1]
    return pairs


def idf_from_corpus(corpus: Corpus, vocab_size: int) -> IdfTable:
    return compute_idf([ex.source for ex in corpus.examples], vocab_size)


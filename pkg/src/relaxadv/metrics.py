"""Translation-quality and perturbation metrics, with corpus aggregation."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import no_grad
from .errors import InputError, UndefinedRatioError
from .models import CausalLm, NmtModel, lm_embed, lm_nll, translate_batch
from .text import IdfTable, Vocabulary, is_special, strip_specials

ASR_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
SUCCESS_RATIO = 0.5


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypothesis: Sequence[int], reference: Sequence[int], max_order: int = 4) -> float:
    """Sentence BLEU-4 in [0, 100].

    BOS/EOS/PAD are stripped first. Precisions for n > 1 get add-one
    smoothing; a hypothesis shorter than ``max_order`` only uses orders up
    to its own length.
    """
    hyp = strip_specials(hypothesis)
    ref = strip_specials(reference)
    if not ref:
        raise InputError("BLEU reference is empty after removing special tokens")
    if not hyp:
        return 0.0
    order = min(max_order, len(hyp))
    log_precision = 0.0
    for n in range(1, order + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        matches = sum(min(c, r[g]) for g, c in h.items())
        smooth = 1 if n > 1 else 0
        if matches + smooth == 0:
            return 0.0
        log_precision += math.log((matches + smooth) / (sum(h.values()) + smooth))
    c, r = len(hyp), len(ref)
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * brevity * math.exp(log_precision / order)


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(g for g in (text[i:i + n] for i in range(len(text) - n + 1)) if not g.isspace())


def chrf(hypothesis: str, reference: str, max_order: int = 6, beta: float = 2.0) -> float:
    """Character n-gram F-score in [0, 100].

    Whitespace runs collapse to one space and all-space n-grams are ignored.
    Precision and recall are averaged over orders 1..N, where N is the
    largest order for which both strings still have an n-gram.
    """
    ref = " ".join(reference.split())
    if not ref:
        raise InputError("chrF reference is empty")
    hyp = " ".join(hypothesis.split())
    precisions, recalls = [], []
    for n in range(1, max_order + 1):
        h, r = _char_ngrams(hyp, n), _char_ngrams(ref, n)
        if not h or not r:
            break
        common = sum((h & r).values())
        precisions.append(common / sum(h.values()))
        recalls.append(common / sum(r.values()))
    if not precisions:
        return 0.0
    p = sum(precisions) / len(precisions)
    rc = sum(recalls) / len(recalls)
    if p + rc == 0.0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1.0 + b2) * p * rc / (b2 * p + rc)


def content_positions(x: Sequence[int]) -> np.ndarray:
    return np.array([i for i, t in enumerate(x) if not is_special(int(t))], dtype=np.int64)


def ter(x: Sequence[int], x_adv: Sequence[int]) -> float:
    """Percent of content positions where the two same-length sentences differ."""
    if len(x) != len(x_adv):
        raise InputError(f"token error rate needs equal lengths, got {len(x)} and {len(x_adv)}")
    pos = content_positions(x)
    if pos.size == 0:
        return 0.0
    x, x_adv = np.asarray(x), np.asarray(x_adv)
    return 100.0 * float((x[pos] != x_adv[pos]).sum()) / pos.size


def relative_decrease(clean: float, adv: float) -> float:
    if clean == 0:
        raise UndefinedRatioError("relative decrease undefined for a zero clean score")
    return (clean - adv) / clean


def is_success(bleu_clean: float, bleu_adv: float, ratio: float = SUCCESS_RATIO) -> bool:
    return bleu_adv < ratio * bleu_clean


def similarity(x: Sequence[int], x_adv: Sequence[int], g: CausalLm, idf: IdfTable) -> float:
    """idf-weighted mean cosine between LM contextual vectors of ``x`` and ``x_adv``.

    Falls back to the unweighted mean over content positions when every
    weight is zero.
    """
    if len(x) != len(x_adv):
        raise InputError(f"similarity needs equal lengths, got {len(x)} and {len(x_adv)}")
    pos = content_positions(x)
    if pos.size == 0:
        return 1.0
    with no_grad():
        v = lm_embed(g, np.asarray(x))
        v_adv = lm_embed(g, np.asarray(x_adv))
        cos = ad.cosine_rows(v, v_adv).data[pos]
    w = idf.lookup(np.asarray(x)[pos])
    if w.sum() <= 0:
        return float(np.clip(cos.mean(), -1.0, 1.0))
    return float(np.clip((w * cos).sum() / w.sum(), -1.0, 1.0))


def perplexity(x: Sequence[int], g: CausalLm) -> float:
    return math.exp(lm_nll(g, x))


@dataclass
class MetricReport:
    bleu_clean: float
    bleu_adv: float
    chrf_clean: float
    chrf_adv: float
    rdbleu: float | None
    rdchrf: float | None
    success: bool
    similarity: float
    perplexity: float
    ter: float

    def success_at(self, ratio: float) -> bool:
        return is_success(self.bleu_clean, self.bleu_adv, ratio)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(x: Sequence[int], x_adv: Sequence[int], y: Sequence[int], f: NmtModel, g: CausalLm,
             idf: IdfTable, vocab: Vocabulary, translations: tuple[list[int], list[int]] | None = None
             ) -> MetricReport:
    """All per-sentence metrics; pass ``translations`` to reuse already decoded outputs."""
    if translations is None:
        translations = tuple(translate_batch(f, [list(x), list(x_adv)]))
    clean, adv = translations
    ref_text = vocab.decode(y)
    b_clean, b_adv = bleu(clean, y), bleu(adv, y)
    c_clean, c_adv = chrf(vocab.decode(clean), ref_text), chrf(vocab.decode(adv), ref_text)
    return MetricReport(
        bleu_clean=b_clean,
        bleu_adv=b_adv,
        chrf_clean=c_clean,
        chrf_adv=c_adv,
        rdbleu=relative_decrease(b_clean, b_adv) if b_clean > 0 else None,
        rdchrf=relative_decrease(c_clean, c_adv) if c_clean > 0 else None,
        success=is_success(b_clean, b_adv),
        similarity=similarity(x, x_adv, g, idf),
        perplexity=perplexity(x_adv, g),
        ter=ter(x, x_adv),
    )


@dataclass
class CorpusSummary:
    asr: float
    rdbleu: float
    rdchrf: float
    similarity: float
    perplexity: float
    ter: float
    n_sentences: int
    n_undefined: int
    asr_at: dict[str, float] = field(default_factory=dict)
    queries: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _mean(values) -> float:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else float("nan")


def aggregate(reports: Sequence[MetricReport], queries: Sequence[int] | None = None) -> CorpusSummary:
    """Corpus means and attack success rate.

    Sentences whose clean BLEU is zero have no defined relative decrease;
    they are left out of the ASR denominator and the RD means and counted in
    ``n_undefined``.
    """
    defined = [r for r in reports if r.bleu_clean > 0]
    asr_at = {}
    for t in ASR_THRESHOLDS:
        asr_at[f"{t:.1f}"] = 100.0 * sum(r.success_at(t) for r in defined) / len(defined) if defined else float("nan")
    asr = 100.0 * sum(r.success for r in defined) / len(defined) if defined else float("nan")
    return CorpusSummary(
        asr=asr,
        rdbleu=_mean(r.rdbleu for r in defined),
        rdchrf=_mean(r.rdchrf for r in reports),
        similarity=_mean(r.similarity for r in reports),
        perplexity=_mean(r.perplexity for r in reports),
        ter=_mean(r.ter for r in reports),
        n_sentences=len(reports),
        n_undefined=len(reports) - len(defined),
        asr_at=asr_at,
        queries=_mean(queries) if queries else None,
    )


TABLE_COLUMNS = ("ASR", "RDBLEU", "RDchrF", "Sim.", "Perp.", "TER")


def format_table(rows: dict[str, CorpusSummary]) -> str:
    """Aligned plain-text table, one row per method, columns in Table-1 order."""
    extra = any(s.queries is not None for s in rows.values())
    header = ["Method", *TABLE_COLUMNS] + (["#Queries"] if extra else []) + ["N"]
    body = []
    for name, s in rows.items():
        cells = [name, f"{s.asr:.2f}", f"{s.rdbleu:.2f}", f"{s.rdchrf:.2f}", f"{s.similarity:.2f}",
                 f"{s.perplexity:.2f}", f"{s.ter:.2f}"]
        if extra:
            cells.append("-" if s.queries is None else f"{s.queries:.0f}")
        cells.append(str(s.n_sentences))
        body.append(cells)
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]

    def fmt(row):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))

    return "\n".join([fmt(header), "  ".join("-" * w for w in widths), *map(fmt, body)])

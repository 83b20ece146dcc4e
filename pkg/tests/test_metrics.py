import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relaxadv.errors import InputError, UndefinedRatioError
from relaxadv.metrics import (MetricReport, aggregate, bleu, chrf, evaluate, format_table,
                              is_success, perplexity, relative_decrease, similarity, ter)
from relaxadv.models import CausalLm, ModelConfig, NmtModel
from relaxadv.text import BOS, EOS, IdfTable, Vocabulary
from oracles import brute_force_bleu, brute_force_chrf

THE, CAT, SAT, DOWN, ON = 4, 5, 6, 7, 8


def test_bleu_identity_and_disjoint():
    assert bleu([4, 5, 6, 7, 8], [4, 5, 6, 7, 8]) == 100.0
    assert bleu([4, 5], [6, 7, 8]) == 0.0


def test_bleu_worksheet():
    # unigram 3/4, bigram (2+1)/(3+1), trigram (1+1)/(2+1), 4-gram (0+1)/(1+1), BP = 1
    worksheet = 100 * (0.75 * 0.75 * (2 / 3) * 0.5) ** 0.25
    assert worksheet == pytest.approx(65.8037, abs=1e-4)
    assert bleu([THE, CAT, SAT, DOWN], [THE, CAT, SAT, ON]) == pytest.approx(worksheet, abs=1e-12)


def test_bleu_strips_special_framing():
    hyp, ref = [THE, CAT, SAT], [THE, CAT, SAT, ON]
    assert bleu([BOS, *hyp, EOS], [BOS, *ref, EOS]) == bleu(hyp, ref)


def test_bleu_empty_reference():
    with pytest.raises(InputError):
        bleu([4], [BOS, EOS])


def test_bleu_short_hypothesis_uses_own_length():
    # 2-token hypothesis: orders 1 and 2 only; BP = exp(1 - 3/2)
    expected = 100 * math.exp(1 - 1.5) * math.sqrt(1.0 * (2 / 2))
    assert bleu([4, 5], [4, 5, 6]) == pytest.approx(expected, abs=1e-12)


def test_bleu_matches_brute_force_exhaustively():
    alphabet = [4, 5, 6]
    seqs = [list(s) for n in range(1, 6) for s in itertools.product(alphabet, repeat=n)]
    for hyp in seqs:
        for ref in seqs:
            assert bleu(hyp, ref) == pytest.approx(brute_force_bleu(hyp, ref), abs=1e-9)


def test_chrf_identity_disjoint_and_worksheet():
    assert chrf("the cat sat", "the cat sat") == 100.0
    assert chrf("abc", "xyz") == 0.0
    # n=1: 3/4, n=2: 2/3, n=3: 1/2, n=4: 0; n>4 has no n-grams; P = R
    assert chrf("abcd", "abce") == pytest.approx(100 * (0.75 + 2 / 3 + 0.5 + 0) / 4, abs=1e-12)


def test_chrf_collapses_whitespace():
    assert chrf("a   b", "a b") == 100.0


@given(st.text(alphabet="abc ", min_size=1, max_size=12), st.text(alphabet="abc ", min_size=1, max_size=12))
def test_chrf_matches_dictionary_oracle(h, r):
    if not r.strip():
        return
    assert chrf(h, r) == pytest.approx(brute_force_chrf(h, r), abs=1e-9)


def test_ter_identities():
    x = [BOS] + list(range(4, 14)) + [EOS]
    assert ter(x, x) == 0.0
    one = list(x)
    one[3] = 20
    assert ter(x, one) == 10.0
    allc = [BOS] + list(range(20, 30)) + [EOS]
    assert ter(x, allc) == 100.0
    with pytest.raises(InputError):
        ter(x, x[:-1])


def test_relative_decrease():
    assert relative_decrease(40, 19) == pytest.approx(0.525)
    assert relative_decrease(40, 40) == 0.0
    assert relative_decrease(40, 0) == 1.0
    assert relative_decrease(40, 50) < 0
    with pytest.raises(UndefinedRatioError):
        relative_decrease(0, 10)


def test_success_definition():
    assert is_success(40, 19)
    assert not is_success(40, 20)


@given(st.floats(0.01, 100), st.floats(0, 100), st.floats(0.01, 100))
def test_success_scale_invariant(clean, adv, c):
    assert is_success(clean, adv) == is_success(clean * c, adv * c) or math.isclose(adv, 0.5 * clean)


@pytest.fixture(scope="module")
def tiny_lm():
    return CausalLm(ModelConfig(vocab_size=12, d_model=8, n_heads=2, n_layers=1, ffn_width=16, max_len=10), seed=4)


def test_similarity_identity_and_bounds(tiny_lm):
    idf = IdfTable(np.linspace(0, 2, 12), 5)
    x = [BOS, 4, 5, 6, 7, EOS]
    assert similarity(x, x, tiny_lm, idf) == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(20):
        xp = [BOS, *rng.integers(4, 12, size=4), EOS]
        assert -1.0 <= similarity(x, xp, tiny_lm, idf) <= 1.0


def test_similarity_weights_high_idf_changes_more(tiny_lm):
    weights = np.zeros(12)
    weights[4], weights[5], weights[6] = 5.0, 0.0, 0.1
    idf = IdfTable(weights, 10)
    x = [BOS, 4, 5, 6, EOS]
    swap_heavy = [BOS, 9, 5, 6, EOS]
    swap_free = [BOS, 4, 9, 6, EOS]
    assert similarity(x, swap_heavy, tiny_lm, idf) < similarity(x, swap_free, tiny_lm, idf)


def test_perplexity_uniform_lm():
    g = CausalLm(ModelConfig(vocab_size=4, d_model=8, n_heads=2, n_layers=1, ffn_width=8, max_len=8), seed=0)
    g.params["embed"].data[:] = 0.0
    assert perplexity([BOS, 3, 3, EOS], g) == pytest.approx(4.0, abs=1e-12)


def test_perplexity_at_least_one(tiny_lm):
    rng = np.random.default_rng(1)
    for _ in range(10):
        assert perplexity([BOS, *rng.integers(4, 12, size=5), EOS], tiny_lm) >= 1.0


def _report(clean, adv, **kw):
    base = dict(chrf_clean=50.0, chrf_adv=40.0, rdchrf=0.2, similarity=0.9, perplexity=10.0, ter=10.0)
    base.update(kw)
    return MetricReport(bleu_clean=clean, bleu_adv=adv, rdbleu=(clean - adv) / clean if clean else None,
                        success=is_success(clean, adv), **base)


def test_aggregate_asr():
    s = aggregate([_report(40, 19), _report(40, 30)])
    assert s.asr == 50.0
    assert s.n_sentences == 2 and s.n_undefined == 0
    assert s.asr_at["0.7"] >= s.asr_at["0.3"]


def test_aggregate_excludes_zero_clean_bleu():
    s = aggregate([_report(40, 10), _report(0, 0, rdchrf=None)])
    assert s.n_undefined == 1
    assert s.asr == 100.0
    assert s.rdbleu == pytest.approx(0.75)


def test_format_table_column_order():
    text = format_table({"ours": aggregate([_report(40, 19)])})
    header = text.splitlines()[0].split()
    assert header[:7] == ["Method", "ASR", "RDBLEU", "RDchrF", "Sim.", "Perp.", "TER"]


def test_evaluate_noop_attack(tiny_lm):
    vocab = Vocabulary([f"w{i}" for i in range(8)])
    f = NmtModel(ModelConfig(vocab_size=12, d_model=8, n_heads=2, n_layers=1, ffn_width=16, max_len=10), seed=0)
    idf = IdfTable(np.linspace(0, 2, 12), 5)
    x = [BOS, 4, 5, 6, EOS]
    # an untrained model may emit nothing; force a known translation so BLEU is defined
    y = [BOS, 7, 8, 9, EOS]
    rep = evaluate(x, x, y, f, tiny_lm, idf, vocab, translations=([7, 8, 9], [7, 8, 9]))
    assert not rep.success and rep.rdbleu == 0.0 and rep.ter == 0.0
    assert rep.similarity == pytest.approx(1.0)
    assert evaluate(x, x, y, f, tiny_lm, idf, vocab) == evaluate(x, x, y, f, tiny_lm, idf, vocab)

"""Behaviour of the attack on the trained cipher models (session fixture)."""

import math

import numpy as np
import pytest

from relaxadv.attack import adv_loss
from relaxadv.config import with_overrides
from relaxadv.metrics import aggregate, perplexity
from relaxadv.models import one_hot
from relaxadv.runner import attack_corpus, replacement_corpus

pytestmark = pytest.mark.slow
N = 50


def _whitebox(cipher, alpha):
    # shares the cache with the acceptance suite so each alpha runs once per session
    key = ("whitebox", alpha)
    if key not in cipher.cache:
        acfg = with_overrides(cipher.cfg, "attack", alpha=alpha).attack
        cipher.cache[key] = attack_corpus(cipher.test.subset(N), cipher.f, cipher.g, cipher.idf, cipher.vocab,
                                          acfg)
    return cipher.cache[key]


def test_clean_input_loss_is_small_negative(cipher):
    ex = cipher.test.examples[0]
    value = adv_loss(one_hot(ex.source, len(cipher.vocab)), ex.reference, cipher.f).item()
    assert -0.5 < value < 0


def test_attack_raises_translation_loss(cipher):
    rises = []
    for o in _whitebox(cipher, cipher.cfg.attack.alpha):
        nmt = -np.asarray(o.trace["adv"])
        rises.append(nmt[-10:].mean() - nmt[:10].mean())
    assert np.mean(rises) > 0


def test_huge_alpha_keeps_the_source(cipher):
    outcomes = _whitebox(cipher, 1e6)
    assert all(o.adversarial == o.original for o in outcomes)


def test_knn_fifteen_percent_budget_hurts(cipher):
    test = cipher.test.subset(N)
    budgets = [math.ceil(0.15 * (len(e.source) - 2)) for e in test.examples]
    out = replacement_corpus(test, cipher.f, cipher.g, cipher.idf, cipher.vocab, budgets, "knn")
    assert aggregate([o.report for o in out]).rdbleu > 0


def test_trained_lm_is_better_than_uniform(cipher):
    ppl = np.mean([perplexity(e.source, cipher.g) for e in cipher.test.examples[:50]])
    assert 1.0 <= ppl < len(cipher.vocab) / 4

"""Relaxed-optimization adversarial attack on the translator.

An adversarial sentence of the same length ``k`` as the source is modelled as
``k`` independent categorical distributions whose logits form the columns of
``P`` (shape ``(|V|, k)``). Gumbel-Softmax samples of ``P`` are fed to the
translator and the language model as soft one-hot matrices, the expected
adversarial-plus-similarity loss is minimised with Adam, and hard sentences
are then drawn from the optimised distributions. The candidate whose
translation scores the lowest BLEU is kept.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import ConfigError, DivergenceError
from .metrics import bleu as sentence_bleu
from .models import CausalLm, NmtModel, lm_embed, nmt_loss, one_hot, translate_batch
from .optim import Adam
from .text import N_SPECIAL, IdfTable, is_special

MASKED_LOGIT = -1e9
_U_MIN = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class AttackConfig:
    alpha: float = 1.0
    lr: float = 0.3
    iterations: int = 100
    batch_size: int = 5
    tau: float = 1.0
    init_constant: float = 15.0
    n_samples: int = 100
    seed: int = 0
    forbid_specials: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")


@dataclass
class AdversarialDistribution:
    """Logits ``P`` plus the bookkeeping that keeps special tokens in place."""

    logits: Tensor
    original: tuple[int, ...]
    protected: frozenset[int]
    frozen: np.ndarray  # bool (|V|, k): entries Adam must never move

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[0]

    @property
    def length(self) -> int:
        return self.logits.shape[1]

    def probs(self) -> np.ndarray:
        with no_grad():
            return ad.softmax(self.logits, axis=0).data

    def argmax(self) -> list[int]:
        out = self.logits.data.argmax(axis=0)
        for j in self.protected:
            out[j] = self.original[j]
        return [int(t) for t in out]

    def protected_onehot(self) -> tuple[np.ndarray, np.ndarray]:
        """``(keep, fixed)``: multiply a sample by ``keep`` and add ``fixed``."""
        keep = np.ones((self.vocab_size, self.length))
        fixed = np.zeros_like(keep)
        for j in self.protected:
            keep[:, j] = 0.0
            fixed[self.original[j], j] = 1.0
        return keep, fixed


def init_distribution(x: Sequence[int], c: float, vocab_size: int,
                      forbid_specials: bool = True) -> AdversarialDistribution:
    """``P[i, j] = c`` where token ``i`` is ``x_j``, else 0.

    BOS/EOS/PAD positions are protected. At every other position, rows of
    the reserved tokens are pushed to ``MASKED_LOGIT`` so they are never
    sampled (the original token's own entry is left alone).
    """
    if c <= 0:
        raise ConfigError(f"initialisation constant must be positive, got {c}")
    x = [int(t) for t in x]
    k = len(x)
    p = np.zeros((vocab_size, k))
    p[x, np.arange(k)] = c
    protected = frozenset(j for j, t in enumerate(x) if is_special(t))
    frozen = np.zeros((vocab_size, k), dtype=bool)
    for j in range(k):
        if j in protected:
            frozen[:, j] = True
        elif forbid_specials:
            rows = [r for r in range(N_SPECIAL) if r != x[j]]
            p[rows, j] = MASKED_LOGIT
            frozen[rows, j] = True
    return AdversarialDistribution(Tensor(p, requires_grad=True), tuple(x), protected, frozen)


@dataclass
class GumbelSample:
    z: Tensor
    noise: np.ndarray


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """G = -ln(-ln U), U ~ Uniform(0, 1)."""
    u = np.clip(rng.random(shape), _U_MIN, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(dist: AdversarialDistribution, tau: float, rng: np.random.Generator | None = None,
                          batch: int | None = None, noise: np.ndarray | None = None) -> GumbelSample:
    """Column-wise ``softmax((P + G) / tau)``; protected columns come back as exact one-hots.

    ``batch`` stacks independent draws along a leading axis. Supplying
    ``noise`` fixes ``G`` (it is treated as a constant by the tape).
    """
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    shape = dist.logits.shape if batch is None else (batch, *dist.logits.shape)
    if noise is None:
        noise = gumbel_noise(shape, rng)
    z = ad.softmax(ad.scale(dist.logits + noise, 1.0 / tau), axis=-2)
    if dist.protected:
        keep, fixed = dist.protected_onehot()
        z = ad.mul(z, keep) + fixed
    return GumbelSample(z, noise)


# ------------------------------------------------------------------ losses


def adv_loss(z, y: Sequence[int], f: NmtModel) -> Tensor:
    """Negative teacher-forced translation loss of the (soft) adversarial input."""
    return -nmt_loss(f, z, y)


def similarity_weights(x: Sequence[int], idf: IdfTable) -> np.ndarray:
    w = idf.lookup(x).astype(np.float64)
    w[[j for j, t in enumerate(x) if is_special(int(t))]] = 0.0
    return w


def sim_loss(z, x: Sequence[int], g: CausalLm, idf: IdfTable) -> Tensor:
    """``-sum_i w_i cos(v_i, v'_i)`` with the clean-side vectors held constant.

    A batched ``z`` returns the mean of the per-sample losses.
    """
    x = [int(t) for t in x]
    with no_grad():
        v = lm_embed(g, np.asarray(x)).data
    v_adv = lm_embed(g, z)
    batched = v_adv.ndim == 3
    if not batched:
        v_adv = ad.reshape(v_adv, (1, *v_adv.shape))
    v = np.broadcast_to(v, v_adv.shape)
    w = similarity_weights(x, idf)
    per_sample = ad.sum(ad.mul(ad.cosine_rows(Tensor(v), v_adv), w), axis=-1)
    return -ad.mean(per_sample)


@dataclass
class ObjectiveTerms:
    total: Tensor
    adv: float
    sim: float


def objective_terms(dist: AdversarialDistribution, x, y, f: NmtModel, g: CausalLm, idf: IdfTable,
                    alpha: float, tau: float, batch: int, rng: np.random.Generator | None = None,
                    noise: np.ndarray | None = None) -> ObjectiveTerms:
    sample = gumbel_softmax_sample(dist, tau, rng, batch=batch, noise=noise)
    adv = adv_loss(sample.z, y, f)
    if alpha == 0:
        with no_grad():
            sim_value = sim_loss(sample.z.detach(), x, g, idf).item()
        return ObjectiveTerms(adv, adv.item(), sim_value)
    sim = sim_loss(sample.z, x, g, idf)
    return ObjectiveTerms(adv + ad.scale(sim, alpha), adv.item(), sim.item())


def total_objective(dist: AdversarialDistribution, x, y, f: NmtModel, g: CausalLm, idf: IdfTable,
                    alpha: float, tau: float, batch: int, rng: np.random.Generator | None = None,
                    noise: np.ndarray | None = None) -> Tensor:
    """Monte Carlo estimate of E[L_adv + alpha * L_sim] over ``batch`` Gumbel-Softmax samples."""
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    return objective_terms(dist, x, y, f, g, idf, alpha, tau, batch, rng, noise).total


@dataclass
class TraceEntry:
    iteration: int
    adv: float
    sim: float
    total: float

    @property
    def nmt_loss(self) -> float:
        return -self.adv


def optimize(dist: AdversarialDistribution, cfg: AttackConfig, x, y, f: NmtModel, g: CausalLm,
             idf: IdfTable, rng: np.random.Generator) -> list[TraceEntry]:
    """Run ``cfg.iterations`` Adam steps on ``P`` in place, fresh noise every step."""
    f.eval()
    g.eval()
    opt = Adam([dist.logits], lr=cfg.lr)
    trace = []
    for it in range(cfg.iterations):
        opt.zero_grad()
        terms = objective_terms(dist, x, y, f, g, idf, cfg.alpha, cfg.tau, cfg.batch_size, rng)
        value = terms.total.item()
        if not math.isfinite(value):
            raise DivergenceError(it, value)
        terms.total.backward()
        dist.logits.grad[dist.frozen] = 0.0
        opt.step()
        trace.append(TraceEntry(it, terms.adv, terms.sim, value))
    return trace


def sample_candidates(dist: AdversarialDistribution, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """``n`` hard sentences, each position drawn from ``softmax(P[:, j])`` via Gumbel-max."""
    noise = gumbel_noise((n, *dist.logits.shape), rng)
    draws = (dist.logits.data + noise).argmax(axis=1)
    for j in dist.protected:
        draws[:, j] = dist.original[j]
    return [tuple(int(t) for t in row) for row in draws]


@dataclass
class Selection:
    best: tuple[int, ...]
    index: int
    scores: list[float]
    translations: dict[tuple[int, ...], list[int]]
    queries: int


def n_changed(x: Sequence[int], cand: Sequence[int]) -> int:
    return sum(int(a) != int(b) for a, b in zip(x, cand))


def select_best(candidates: Sequence[Sequence[int]], f: NmtModel, y: Sequence[int],
                x: Sequence[int] | None = None, bleu=sentence_bleu) -> Selection:
    """Pick the candidate whose translation has the lowest BLEU against ``y``.

    Ties prefer fewer changed tokens relative to ``x``, then the earliest
    index. Each distinct candidate is translated once; ``queries`` still
    counts every candidate.
    """
    if not candidates:
        raise ConfigError("select_best needs at least one candidate")
    candidates = [tuple(int(t) for t in c) for c in candidates]
    unique = list(dict.fromkeys(candidates))
    translations = dict(zip(unique, translate_batch(f, unique)))
    scores = [bleu(translations[c], y) for c in candidates]
    ref = candidates[0] if x is None else tuple(x)
    index = min(range(len(candidates)), key=lambda i: (scores[i], n_changed(ref, candidates[i]), i))
    return Selection(candidates[index], index, scores, translations, len(candidates))


@dataclass
class AttackResult:
    original: tuple[int, ...]
    reference: tuple[int, ...]
    adversarial: tuple[int, ...]
    candidates: list[tuple[int, ...]]
    candidate_bleu: list[float]
    trace: list[TraceEntry]
    wall_clock: float
    config: AttackConfig
    queries: int
    translation_adv: list[int] = field(default_factory=list)

    def config_dict(self) -> dict:
        return asdict(self.config)


def _run(x, y, f_opt: NmtModel, f_select: NmtModel, g: CausalLm, idf: IdfTable, cfg: AttackConfig,
         rng: np.random.Generator | None) -> AttackResult:
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    x = tuple(int(t) for t in x)
    y = tuple(int(t) for t in y)
    dist = init_distribution(x, cfg.init_constant, f_opt.config.vocab_size, cfg.forbid_specials)
    trace = optimize(dist, cfg, x, y, f_opt, g, idf, rng)
    candidates = sample_candidates(dist, cfg.n_samples, rng)
    sel = select_best(candidates, f_select, y, x)
    return AttackResult(x, y, sel.best, candidates, sel.scores, trace, time.perf_counter() - start,
                        cfg, sel.queries, sel.translations[sel.best])


def attack_whitebox(x, y, f: NmtModel, g: CausalLm, idf: IdfTable, cfg: AttackConfig,
                    rng: np.random.Generator | None = None) -> AttackResult:
    """Optimise, sample ``cfg.n_samples`` candidates and keep the most damaging one."""
    return _run(x, y, f, f, g, idf, cfg, rng)


def check_same_vocabulary(a: NmtModel, b: NmtModel) -> None:
    if a.config.vocab_size != b.config.vocab_size:
        raise ConfigError(f"vocabulary sizes differ: {a.config.vocab_size} vs {b.config.vocab_size}")
    if a.vocab is not None and b.vocab is not None and a.vocab != b.vocab:
        raise ConfigError("reference and target models use different vocabularies")


def attack_blackbox(x, y, f_ref: NmtModel, g: CausalLm, idf: IdfTable, cfg: AttackConfig,
                    f_target: NmtModel, rng: np.random.Generator | None = None) -> AttackResult:
    """Optimise ``P`` on ``f_ref``; only candidate translations touch ``f_target``."""
    check_same_vocabulary(f_ref, f_target)
    return _run(x, y, f_ref, f_target, g, idf, cfg, rng)


# ------------------------------------------------------------------ baselines


def knn_baseline(x, y, f: NmtModel, n_replace: int) -> tuple[int, ...]:
    """Replace the ``n_replace`` positions with the largest loss-gradient norm.

    Each chosen token becomes its nearest non-reserved neighbour (cosine
    similarity of columns of the translator's embedding matrix), never itself.
    """
    x = tuple(int(t) for t in x)
    content = [j for j, t in enumerate(x) if not is_special(t)]
    if n_replace < 0 or n_replace > len(content):
        raise ConfigError(f"n_replace={n_replace} outside [0, {len(content)}]")
    if n_replace == 0:
        return x
    vocab_size = f.config.vocab_size
    z = Tensor(one_hot(np.asarray(x), vocab_size), requires_grad=True)
    f.eval()
    nmt_loss(f, z, y).backward()
    norms = np.linalg.norm(z.grad, axis=0)
    ranked = sorted(content, key=lambda j: (-norms[j], j))[:n_replace]

    emb = f.params["embed"].data
    unit = emb / np.maximum(np.linalg.norm(emb, axis=0, keepdims=True), 1e-12)
    sims = unit.T @ unit
    sims[:, :N_SPECIAL] = -np.inf
    out = list(x)
    for j in ranked:
        row = sims[x[j]].copy()
        row[x[j]] = -np.inf
        out[j] = int(row.argmax())
    return tuple(out)


def random_replacement(x, n_replace: int, vocab_size: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Swap ``n_replace`` random content positions for random different content tokens."""
    x = tuple(int(t) for t in x)
    content = [j for j, t in enumerate(x) if not is_special(t)]
    if n_replace < 0 or n_replace > len(content):
        raise ConfigError(f"n_replace={n_replace} outside [0, {len(content)}]")
    out = list(x)
    for j in rng.choice(content, size=n_replace, replace=False):
        choices = [t for t in range(N_SPECIAL, vocab_size) if t != x[j]]
        out[j] = int(rng.choice(choices))
    return tuple(out)

"""Shared fixtures: the pinned cipher setup, trained once per session."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from relaxadv.config import RunConfig, load_config
from relaxadv.models import CausalLm, NmtModel, save_checkpoint, train
from relaxadv.runner import build_synthetic, heldout_bleu, write_corpus_dir
from relaxadv.text import Corpus, IdfTable, Vocabulary, idf_from_corpus

CONFIG_PATH = Path(__file__).resolve().parents[1] / "configs" / "cipher.ini"
VERDICTS: list[str] = []


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'} {detail}"
    VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)


@dataclass
class CipherSetup:
    cfg: RunConfig
    vocab: Vocabulary
    train: Corpus
    test: Corpus
    idf: IdfTable
    f: NmtModel
    g: CausalLm
    target: NmtModel
    bleu_curve: list[float]
    early_state: dict[str, np.ndarray]
    directory: Path
    cache: dict = field(default_factory=dict)


SNAPSHOT_EPOCH = 2


@pytest.fixture(scope="session")
def cipher(tmp_path_factory) -> CipherSetup:
    cfg = load_config(CONFIG_PATH)
    c = cfg.corpus
    vocab, tr, te = build_synthetic(c.task, c.vocab_size, c.n_train, c.n_test, (c.min_tokens, c.max_tokens),
                                    c.seed, cfg.model.max_len)
    t = cfg.train
    f = NmtModel(cfg.model.model_config(len(vocab)), seed=cfg.model.seed)
    curve, early = [], {}

    def on_epoch(epoch, loss):
        if epoch == SNAPSHOT_EPOCH:
            early.update({k: v.copy() for k, v in f.state_dict().items()})
        curve.append(heldout_bleu(f, te))

    train(f, tr, t.epochs, t.lr, t.seed, t.batch_size, on_epoch=on_epoch)
    g = CausalLm(cfg.lm.model_config(len(vocab)), seed=cfg.lm.seed)
    train(g, tr, t.epochs, t.lr, t.seed, t.batch_size)
    target = NmtModel(cfg.target.model_config(len(vocab)), seed=cfg.target.seed)
    train(target, tr, t.epochs, t.lr, t.seed, t.batch_size)

    out = tmp_path_factory.mktemp("cipher")
    write_corpus_dir(out / "corpus", vocab, tr, te)
    for name, model in (("nmt", f), ("lm", g), ("target", target)):
        model.vocab = vocab
        save_checkpoint(model, out / f"{name}.ckpt")
    return CipherSetup(cfg, vocab, tr, te, idf_from_corpus(tr, len(vocab)), f, g, target, curve, early, out)

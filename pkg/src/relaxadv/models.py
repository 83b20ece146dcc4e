"""Tiny transformer translator and causal language model.

Both models embed their input as ``E @ Z`` where ``E`` holds one embedding
column per vocabulary entry and ``Z`` is a ``(|V|, k)`` column-stochastic
matrix. Token ids are converted to exact one-hot columns first, so hard and
soft inputs follow one code path. The output projection reuses ``E``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import BinaryIO, Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import ConfigError, FormatError, LengthError, SimplexError
from .optim import Adam
from .text import BOS, EOS, PAD, Corpus

NEG_INF = -1e9
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn_width: int = 128
    max_len: int = 32
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if min(self.vocab_size, self.d_model, self.n_heads, self.n_layers,
               self.ffn_width, self.max_len) < 1:
            raise ConfigError(f"model dimensions must be positive: {self}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


# ------------------------------------------------------------------ inputs


def _prepare_input(inp, vocab_size: int, max_len: int):
    """Return ``(Z, key_pad_mask, batched)`` with ``Z`` shaped ``(B, |V|, k)``."""
    if isinstance(inp, Tensor) or (isinstance(inp, np.ndarray) and inp.dtype.kind == "f"):
        z = ad.as_tensor(inp)
        batched = z.ndim == 3
        if not batched:
            z = ad.reshape(z, (1, *z.shape))
        if z.shape[1] != vocab_size:
            raise SimplexError(f"soft input has {z.shape[1]} rows, vocabulary has {vocab_size}")
        if z.shape[2] > max_len:
            raise LengthError(f"input length {z.shape[2]} exceeds max_len {max_len}")
        sums = z.data.sum(axis=1)
        if np.abs(sums - 1.0).max() > SIMPLEX_TOL or (z.data < -SIMPLEX_TOL).any():
            raise SimplexError("soft input columns must be probability vectors")
        return z, None, batched

    ids = np.asarray(inp, dtype=np.int64)
    batched = ids.ndim == 2
    if not batched:
        ids = ids[None, :]
    if ids.shape[1] > max_len:
        raise LengthError(f"input length {ids.shape[1]} exceeds max_len {max_len}")
    return Tensor(one_hot(ids, vocab_size)), ids == PAD, batched


def one_hot(ids, vocab_size: int) -> np.ndarray:
    """``(..., k)`` ids to ``(..., |V|, k)`` one-hot columns."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.zeros((*ids.shape[:-1], vocab_size, ids.shape[-1]))
    np.put_along_axis(out, ids[..., None, :], 1.0, axis=-2)
    return out


def _causal_mask(t: int) -> np.ndarray:
    return (np.triu(np.ones((t, t)), k=1) * NEG_INF)[None, None]


def _pad_mask(pad: np.ndarray | None) -> np.ndarray | int:
    return 0 if pad is None else (pad * NEG_INF)[:, None, None, :]


# ------------------------------------------------------------------ network


class _Transformer:
    kind = ""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.training = False
        self._dropout_rng: np.random.Generator | None = None
        self.vocab = None
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for name, shape in self.parameter_shapes().items():
            self.params[name] = Tensor(self._init(name, shape, rng), requires_grad=True)

    # -- parameter layout

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        shapes = {"embed": (c.d_model, c.vocab_size), "pos": (c.max_len, c.d_model)}
        for prefix, cross in self._blocks():
            shapes.update(_block_shapes(prefix, c, cross))
        shapes.update({"final_ln.g": (c.d_model,), "final_ln.b": (c.d_model,)})
        return shapes

    def _blocks(self) -> list[tuple[str, bool]]:
        raise NotImplementedError

    @staticmethod
    def _init(name: str, shape, rng: np.random.Generator) -> np.ndarray:
        if name.endswith(".g"):
            return np.ones(shape)
        if name.endswith(".b") or name.endswith("bias"):
            return np.zeros(shape)
        if name in ("embed", "pos"):
            return rng.normal(0.0, 0.05, size=shape)
        return rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def eval(self):
        self.training = False
        self._dropout_rng = None
        return self

    def train(self, rng: np.random.Generator | None = None):
        self.training = True
        self._dropout_rng = rng
        return self

    # -- building blocks

    def _dropout(self, x: Tensor) -> Tensor:
        rate = self.config.dropout_rate
        if not self.training or rate == 0.0 or self._dropout_rng is None:
            return x
        keep = (self._dropout_rng.random(x.shape) >= rate) / (1.0 - rate)
        return ad.mul(x, keep)

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return ad.layer_norm(x, self.params[prefix + ".g"], self.params[prefix + ".b"])

    def _embed(self, z: Tensor) -> Tensor:
        k = z.shape[2]
        emb = ad.transpose(self.params["embed"] @ z, (0, 2, 1))
        return self._dropout(emb + self.params["pos"][:k])

    def _attention(self, prefix: str, xq: Tensor, xkv: Tensor, mask) -> Tensor:
        p = self.params
        b, tq, d = xq.shape
        tk = xkv.shape[1]
        h = self.config.n_heads
        dh = d // h

        def heads(x, t):
            return ad.transpose(ad.reshape(x, (b, t, h, dh)), (0, 2, 1, 3))

        q = heads(xq @ p[prefix + ".wq"], tq)
        k = heads(xkv @ p[prefix + ".wk"], tk)
        v = heads(xkv @ p[prefix + ".wv"], tk)
        scores = ad.scale(q @ ad.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
        if not isinstance(mask, int):
            scores = scores + mask
        attn = ad.softmax(scores, axis=-1)
        out = ad.reshape(ad.transpose(attn @ v, (0, 2, 1, 3)), (b, tq, d))
        return self._dropout(out @ p[prefix + ".wo"])

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        hidden = ad.relu(x @ p[prefix + ".w1"] + p[prefix + ".b1"])
        return self._dropout(hidden @ p[prefix + ".w2"] + p[prefix + ".b2"])

    def _logits(self, hidden: Tensor) -> Tensor:
        return hidden @ self.params["embed"]

    # -- persistence

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.parameter_shapes()
        if set(state) != set(expected):
            missing = sorted(set(expected) - set(state))
            extra = sorted(set(state) - set(expected))
            raise FormatError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if tuple(arr.shape) != expected[name]:
                raise FormatError(f"parameter {name} has shape {arr.shape}, config requires {expected[name]}")
            self.params[name].data = np.array(arr, dtype=np.float64)


def _block_shapes(prefix: str, c: ModelConfig, cross: bool) -> dict[str, tuple[int, ...]]:
    d, f = c.d_model, c.ffn_width
    shapes = {}
    attns = ["self", "cross"] if cross else ["self"]
    for a in attns:
        shapes[f"{prefix}.ln_{a}.g"] = (d,)
        shapes[f"{prefix}.ln_{a}.b"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{a}.{w}"] = (d, d)
    shapes.update({
        f"{prefix}.ln_ffn.g": (d,), f"{prefix}.ln_ffn.b": (d,),
        f"{prefix}.ffn.w1": (d, f), f"{prefix}.ffn.b1": (f,),
        f"{prefix}.ffn.w2": (f, d), f"{prefix}.ffn.b2": (d,),
    })
    return shapes


class NmtModel(_Transformer):
    """Pre-norm encoder-decoder translator with weight-tied output projection."""

    kind = "nmt"

    def _blocks(self):
        n = self.config.n_layers
        return [(f"enc.{i}", False) for i in range(n)] + [(f"dec.{i}", True) for i in range(n)]

    def encode(self, z: Tensor, pad) -> Tensor:
        x = self._embed(z)
        mask = _pad_mask(pad)
        for i in range(self.config.n_layers):
            p = f"enc.{i}"
            h = self._ln(x, p + ".ln_self")
            x = x + self._attention(p + ".self", h, h, mask)
            x = x + self._ffn(p + ".ffn", self._ln(x, p + ".ln_ffn"))
        return x

    def decode(self, memory: Tensor, src_pad, prev_ids: np.ndarray) -> Tensor:
        """Logits ``(B, t, |V|)`` for next tokens given decoder inputs ``prev_ids``."""
        t = prev_ids.shape[1]
        x = self._embed(Tensor(one_hot(prev_ids, self.config.vocab_size)))
        self_mask = _causal_mask(t) + _pad_mask(prev_ids == PAD)
        cross_mask = _pad_mask(src_pad)
        for i in range(self.config.n_layers):
            p = f"dec.{i}"
            h = self._ln(x, p + ".ln_self")
            x = x + self._attention(p + ".self", h, h, self_mask)
            x = x + self._attention(p + ".cross", self._ln(x, p + ".ln_cross"), memory, cross_mask)
            x = x + self._ffn(p + ".ffn", self._ln(x, p + ".ln_ffn"))
        return self._logits(self._ln(x, "final_ln"))


class CausalLm(_Transformer):
    """Decoder-only language model; its final normalized hidden states are the contextual vectors."""

    kind = "lm"

    def _blocks(self):
        return [(f"dec.{i}", False) for i in range(self.config.n_layers)]

    def hidden(self, z: Tensor, pad) -> Tensor:
        x = self._embed(z)
        mask = _causal_mask(z.shape[2]) + _pad_mask(pad)
        for i in range(self.config.n_layers):
            p = f"dec.{i}"
            h = self._ln(x, p + ".ln_self")
            x = x + self._attention(p + ".self", h, h, mask)
            x = x + self._ffn(p + ".ffn", self._ln(x, p + ".ln_ffn"))
        return self._ln(x, "final_ln")


# ------------------------------------------------------------------ operations


def _batch_targets(y, batch: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.ndim == 1:
        y = np.broadcast_to(y, (batch, y.shape[0]))
    return y


def nmt_loss(f: NmtModel, inp, y) -> Tensor:
    """Teacher-forced mean token cross-entropy of ``y`` given ``inp`` (ids or soft matrix).

    A batched input ``(B, |V|, k)`` with a single ``y`` averages over all
    ``B * (m - 1)`` target positions.
    """
    c = f.config
    z, pad, _ = _prepare_input(inp, c.vocab_size, c.max_len)
    y = _batch_targets(y, z.shape[0])
    if y.shape[1] > c.max_len:
        raise LengthError(f"reference length {y.shape[1]} exceeds max_len {c.max_len}")
    if y.shape[1] < 2:
        raise LengthError("reference needs at least BOS and one more token")
    memory = f.encode(z, pad)
    logits = f.decode(memory, pad, y[:, :-1])
    return ad.cross_entropy(logits, y[:, 1:], ignore_index=PAD)


def translate(f: NmtModel, x, max_out: int | None = None) -> list[int]:
    """Greedy decoding from BOS; returns the tokens before EOS."""
    return translate_batch(f, [x], max_out)[0]


def translate_batch(f: NmtModel, xs: Sequence[Sequence[int]], max_out: int | None = None) -> list[list[int]]:
    """Greedy-decode several sources at once (padded to a common length).

    Ties in the argmax go to the lowest token id.
    """
    c = f.config
    if max_out is None:
        max_out = c.max_len - 1
    max_out = min(max_out, c.max_len - 1)
    if not xs:
        return []
    if max_out <= 0:
        return [[] for _ in xs]
    width = max(len(x) for x in xs)
    ids = np.full((len(xs), width), PAD, dtype=np.int64)
    for i, x in enumerate(xs):
        ids[i, :len(x)] = x
    was_training = f.training
    f.eval()
    with no_grad():
        z, pad, _ = _prepare_input(ids, c.vocab_size, c.max_len)
        memory = f.encode(z, pad)
        prev = np.full((len(xs), 1), BOS, dtype=np.int64)
        done = np.zeros(len(xs), dtype=bool)
        for _ in range(max_out):
            logits = f.decode(memory, pad, prev).data[:, -1]
            nxt = np.where(done, PAD, logits.argmax(axis=-1))
            prev = np.concatenate([prev, nxt[:, None]], axis=1)
            done |= nxt == EOS
            if done.all():
                break
    if was_training:
        f.training = True
    out = []
    for row in prev[:, 1:]:
        toks = []
        for t in row:
            if t in (EOS, PAD):
                break
            toks.append(int(t))
        out.append(toks)
    return out


def lm_embed(g: CausalLm, inp) -> Tensor:
    """Contextual vectors ``(k, d)`` (or ``(B, k, d)`` for batched input)."""
    c = g.config
    z, pad, batched = _prepare_input(inp, c.vocab_size, c.max_len)
    v = g.hidden(z, pad)
    return v if batched else ad.reshape(v, v.shape[1:])


def lm_nll_tensor(g: CausalLm, x) -> Tensor:
    x = np.asarray(x, dtype=np.int64)
    if x.shape[-1] < 2:
        raise LengthError("lm_nll needs at least two tokens")
    c = g.config
    z, pad, _ = _prepare_input(x, c.vocab_size, c.max_len)
    logits = g._logits(g.hidden(z, pad))
    ids = x if x.ndim == 2 else x[None, :]
    return ad.cross_entropy(logits[:, :-1], ids[:, 1:], ignore_index=PAD)


def lm_nll(g: CausalLm, x) -> float:
    """Mean next-token negative log-likelihood over positions 2..k."""
    with no_grad():
        return lm_nll_tensor(g, x).item()


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    losses: list[float]
    evaluations: list[float]


def _pad_batch(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def train(model: _Transformer, corpus: Corpus, epochs: int, lr: float = 3e-3, seed: int = 0,
          batch_size: int = 32, on_epoch: Callable[[int, float], float | None] | None = None) -> TrainResult:
    """Adam training with teacher forcing (translator) or next-token prediction (LM).

    Returns the mean training loss per epoch and whatever ``on_epoch`` reported.
    """
    if len(corpus) == 0:
        raise ConfigError("cannot train on an empty corpus")
    vocab_size = model.config.vocab_size
    for ex in corpus.examples:
        if max(ex.source) >= vocab_size or max(ex.reference) >= vocab_size:
            raise ConfigError("corpus contains token ids outside the model vocabulary")
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=lr, clip_norm=1.0)
    result = TrainResult([], [])
    n = len(corpus)
    for epoch in range(epochs):
        model.train(rng)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, batch_size):
            batch = [corpus.examples[i] for i in order[start:start + batch_size]]
            opt.zero_grad()
            if isinstance(model, NmtModel):
                loss = nmt_loss(model, _pad_batch([e.source for e in batch]),
                                _pad_batch([e.reference for e in batch]))
            else:
                loss = lm_nll_tensor(model, _pad_batch([e.source for e in batch]))
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        model.eval()
        result.losses.append(total / count)
        if on_epoch is not None:
            score = on_epoch(epoch + 1, result.losses[-1])
            if score is not None:
                result.evaluations.append(score)
    model.eval()
    return result


# ------------------------------------------------------------------ checkpoints

MAGIC = b"RXADCKPT"
FORMAT_VERSION = 1
_KINDS = {"nmt": 0, "lm": 1}
_CLASSES = {0: NmtModel, 1: CausalLm}


def save_checkpoint(model: _Transformer, path: str | Path) -> None:
    """Write header, integer config fields, then named little-endian float64 tensors."""
    c = model.config
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fields = [FORMAT_VERSION, _KINDS[model.kind], c.vocab_size, c.d_model, c.n_heads,
                  c.n_layers, c.ffn_width, c.max_len, round(c.dropout_rate * 1_000_000),
                  len(model.params)]
        fh.write(struct.pack("<10I", *fields))
        for name, tensor in model.params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def _read(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("checkpoint truncated")
    return buf


def load_checkpoint(path: str | Path) -> NmtModel | CausalLm:
    with open(path, "rb") as fh:
        if _read(fh, len(MAGIC)) != MAGIC:
            raise FormatError(f"{path} is not a checkpoint file")
        (version, kind, vocab_size, d_model, n_heads, n_layers, ffn_width, max_len,
         dropout_ppm, n_params) = struct.unpack("<10I", _read(fh, 40))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        if kind not in _CLASSES:
            raise FormatError(f"unknown model kind {kind}")
        config = ModelConfig(vocab_size, d_model, n_heads, n_layers, ffn_width, max_len,
                             dropout_ppm / 1_000_000)
        state = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<I", _read(fh, 4))
            name = _read(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read(fh, 4))
            dims = struct.unpack(f"<{rank}I", _read(fh, 4 * rank))
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(_read(fh, 8 * count), dtype="<f8").reshape(dims)
            state[name] = data.astype(np.float64)
        if fh.read(1):
            raise FormatError("trailing bytes after last parameter")
    model = _CLASSES[kind](config)
    model.load_state_dict(state)
    return model


def config_dict(model: _Transformer) -> dict:
    return {"kind": model.kind, **asdict(model.config)}

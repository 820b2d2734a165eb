"""Tokenization, embedding and the bidirectional instruction encoder."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx

PAD, UNK = 0, 1
RESERVED = ("<pad>", "<unk>")


class Vocabulary:
    """Token <-> id map with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens):
        self.itos = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                continue
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, words):
        return [self.stoi.get(w, UNK) for w in words]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def tokenize(self, text):
        return self.encode(text.split())

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]))

    @classmethod
    def load(cls, path):
        return cls([line for line in Path(path).read_text().splitlines() if line])


@dataclass
class InstructionEncoding:
    token_ids: np.ndarray      # [B, L] int
    mask: np.ndarray           # [B, L] bool, True on real tokens
    hidden: nx.Tensor          # [B, L, 2H]

    @property
    def lengths(self):
        return self.mask.sum(axis=-1)


def pad_batch(sequences):
    if any(len(s) == 0 for s in sequences):
        raise ValueError("cannot encode an empty instruction")
    L = max(len(s) for s in sequences)
    ids = np.full((len(sequences), L), PAD, dtype=np.int64)
    for b, s in enumerate(sequences):
        ids[b, :len(s)] = s
    return ids, ids != PAD


class InstructionEncoder:
    """Learned embedding followed by a bidirectional LSTM.

    ``tied=True`` shares one set of LSTM weights between the two directions
    (only used to check the direction-mirroring property).
    """

    def __init__(self, store, vocab_size, embed_dim=32, hidden=32, prefix="encoder", tied=False,
                 forget_bias=0.0):
        self.store = store
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.prefix = prefix
        self.tied = tied
        self.forget_bias = forget_bias

    @property
    def out_dim(self):
        return 2 * self.hidden

    def embedding_table(self):
        name = f"{self.prefix}.embed"
        fresh = name not in self.store
        W = self.store.get(name, (self.vocab_size, self.embed_dim), init="uniform", fan_in=1)
        if fresh:
            W.data[PAD] = 0.0
            self.store.frozen_rows[name] = PAD
        return W

    def embed(self, token_ids):
        token_ids = np.asarray(token_ids, dtype=np.int64)
        return nx.embedding(self.embedding_table(), token_ids, pad_id=PAD)

    def _cell(self, direction):
        tag = "fwd" if self.tied else direction
        H, E = self.hidden, self.embed_dim
        s = self.store
        return (s.get(f"{self.prefix}.{tag}.Wx", (4 * H, E), fan_in=H),
                s.get(f"{self.prefix}.{tag}.Wh", (4 * H, H), fan_in=H),
                s.lstm_bias(f"{self.prefix}.{tag}.b", H, self.forget_bias))

    def _run(self, xs, mask, order, direction):
        Wx, Wh, b = self._cell(direction)
        B = mask.shape[0]
        h = nx.Tensor(np.zeros((B, self.hidden)))
        c = nx.Tensor(np.zeros((B, self.hidden)))
        outs = [None] * len(order)
        for j in order:
            h_new, c_new = nx.lstm_step(xs[j], h, c, Wx, Wh, b)
            m = mask[:, j:j + 1]
            # padded steps leave the running state untouched
            h = nx.where(m, h_new, h)
            c = nx.where(m, c_new, c)
            outs[j] = nx.mul(h, m.astype(float))
        return outs

    def encode(self, token_ids, mask=None):
        token_ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
        if token_ids.shape[1] == 0:
            raise ValueError("cannot encode an empty instruction")
        if mask is None:
            mask = token_ids != PAD
        if not mask.any(axis=1).all():
            raise ValueError("cannot encode an empty instruction")
        emb = self.embed(token_ids)
        L = token_ids.shape[1]
        if nx.fused_enabled():
            fwd = nx.lstm_sequence(emb, mask, *self._cell("fwd"))
            bwd = nx.lstm_sequence(emb, mask, *self._cell("bwd"), reverse=True)
            return InstructionEncoding(token_ids=token_ids, mask=mask, hidden=nx.concat([fwd, bwd]))
        xs = nx.unbind(emb, axis=1)
        fwd = self._run(xs, mask, range(L), "fwd")
        bwd = self._run(xs, mask, range(L - 1, -1, -1), "bwd")
        # [f_1, b_1, f_2, b_2, ...] flattened row-major is exactly [B, L, 2H]
        flat = nx.concat([t for pair in zip(fwd, bwd) for t in pair])
        hidden = nx.reshape(flat, (mask.shape[0], L, 2 * self.hidden))
        return InstructionEncoding(token_ids=token_ids, mask=mask, hidden=hidden)

"""Missing-aware transformer for incomplete clinical feature vectors.

Each schema feature becomes one token. Categorical tokens are a learned bias
plus a row of a per-feature lookup table, with a fixed zero row standing in
for a missing value. Numerical and ordinal tokens are a learned bias plus the
value times one of two learned rows selected by the availability indicator;
a missing value uses the "absent" row with the value taken as 1.

Attention is masked on both sides: a score is blocked whenever its query or
key feature is missing, and the lanes of missing tokens are held at exactly
zero through every sub-layer, residuals included, so missing features neither
send nor receive information anywhere in the stack.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import tensor as T
from ..data.schema import FeatureSchema
from ..tensor import Tensor
from .base import Module, uniform_init


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NaimConfig:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.d_model, self.n_heads, self.d_ff) < 1 or self.n_layers < 0:
            raise ConfigError(f"sizes must be positive: {self}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class NaimBatch:
    """Per-feature encoded values with their observed mask; rows index patients."""

    values: np.ndarray
    observed: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, rows) -> "NaimBatch":
        return NaimBatch(self.values[rows], self.observed[rows])

    @classmethod
    def from_dataset(cls, data, rows=None) -> "NaimBatch":
        if rows is None:
            return cls(data.values, data.observed)
        return cls(data.values[rows], data.observed[rows])


def build_mask(observed: np.ndarray) -> np.ndarray:
    """Additive mask: ``-inf`` at (i, j) when feature i or feature j is missing.

    Works on one row ``(n,)`` or a batch ``(B, n)``.
    """
    observed = np.asarray(observed, dtype=bool)
    both = observed[..., :, None] & observed[..., None, :]
    return np.where(both, 0.0, T.NEG_INF)


def _lanes(x: Tensor, observed: np.ndarray) -> Tensor:
    return T.where(observed[..., None], x, 0.0)


def masked_self_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
    """Per-head ``ReLU(Softmax(QK^T/sqrt(d_h) + M) + M^T) V``.

    ``q, k, v`` are ``(..., heads, n, d_h)`` and ``mask`` is ``(..., n, n)``.
    Adding ``-inf`` after the softmax and clipping at zero is the same as
    zeroing the blocked entries, which is what is done here. Returns the
    attended values and the realized attention weights.
    """
    d_h = q.shape[-1]
    blocked = np.isneginf(mask)[..., None, :, :]
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_h))
    weights = T.masked_softmax(scores, np.where(blocked, T.NEG_INF, 0.0))
    weights = T.where(blocked, 0.0, weights)
    return T.matmul(weights, v), weights


class EncoderLayer:
    def __init__(self, owner: Module, prefix: str, cfg: NaimConfig, rng: np.random.Generator):
        d, ff = cfg.d_model, cfg.d_ff
        self.cfg = cfg
        r = owner.register
        self.wq = r(uniform_init(rng, (d, d), d, f"{prefix}.wq"))
        self.bq = r(uniform_init(rng, (d,), d, f"{prefix}.bq"))
        self.wk = r(uniform_init(rng, (d, d), d, f"{prefix}.wk"))
        self.bk = r(uniform_init(rng, (d,), d, f"{prefix}.bk"))
        self.wv = r(uniform_init(rng, (d, d), d, f"{prefix}.wv"))
        self.bv = r(uniform_init(rng, (d,), d, f"{prefix}.bv"))
        self.wo = r(uniform_init(rng, (d, d), d, f"{prefix}.wo"))
        self.bo = r(uniform_init(rng, (d,), d, f"{prefix}.bo"))
        self.ln1_g = r(Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln1_g"))
        self.ln1_b = r(Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.ln1_b"))
        self.w1 = r(uniform_init(rng, (d, ff), d, f"{prefix}.w1"))
        self.b1 = r(uniform_init(rng, (ff,), d, f"{prefix}.b1"))
        self.w2 = r(uniform_init(rng, (ff, d), ff, f"{prefix}.w2"))
        self.b2 = r(uniform_init(rng, (d,), ff, f"{prefix}.b2"))
        self.ln2_g = r(Tensor(np.ones(d), requires_grad=True, name=f"{prefix}.ln2_g"))
        self.ln2_b = r(Tensor(np.zeros(d), requires_grad=True, name=f"{prefix}.ln2_b"))

    def _heads(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        h = self.cfg.n_heads
        split = T.reshape(x, (*lead, n, h, d // h))
        return T.swapaxes(split, -3, -2)

    def _merge(self, x: Tensor) -> Tensor:
        *lead, h, n, dh = x.shape
        return T.reshape(T.swapaxes(x, -3, -2), (*lead, n, h * dh))

    def __call__(self, x: Tensor, mask: np.ndarray, observed: np.ndarray,
                 training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        q = self._heads(x @ self.wq + self.bq)
        k = self._heads(x @ self.wk + self.bk)
        v = self._heads(x @ self.wv + self.bv)
        attended, weights = masked_self_attention(q, k, v, mask)
        attn_out = _lanes(self._merge(attended) @ self.wo + self.bo, observed)
        rate = self.cfg.dropout
        x = _lanes(T.layer_norm(x + T.dropout(attn_out, rate, rng, training), self.ln1_g, self.ln1_b), observed)
        hidden = T.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2
        x = _lanes(T.layer_norm(x + T.dropout(hidden, rate, rng, training), self.ln2_g, self.ln2_b), observed)
        return x, weights


class NaimModel(Module):
    kind = "naim"

    def __init__(self, schema: FeatureSchema, config: NaimConfig | None = None,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.schema = schema
        self.config = config or NaimConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        d = self.config.d_model
        self.tables: list[Tensor] = []
        for feat in schema:
            if feat.is_categorical:
                table = uniform_init(rng, (len(feat.categories), d), d, f"embed.{feat.name}.cat")
            else:
                # row 0: value absent, row 1: value present
                table = uniform_init(rng, (2, d), d, f"embed.{feat.name}.num")
            self.tables.append(self.register(table))
        self.bias = self.register(uniform_init(rng, (len(schema), d), d, "embed.bias"))
        self.layers = [EncoderLayer(self, f"layer{i}", self.config, rng) for i in range(self.config.n_layers)]
        width = len(schema) * d
        self.head_w = self.register(uniform_init(rng, (width, 2), width, "head.w"))
        self.head_b = self.register(uniform_init(rng, (2,), width, "head.b"))
        self.last_attention: list[np.ndarray] = []

    def config_dict(self) -> dict:
        return asdict(self.config)

    def embed(self, batch: NaimBatch) -> Tensor:
        """Token sequence ``(B, n_features, d_model)``."""
        values = np.asarray(batch.values, dtype=np.float64)
        observed = np.asarray(batch.observed, dtype=bool)
        tokens = []
        for j, (feat, table) in enumerate(zip(self.schema, self.tables)):
            seen = observed[:, j]
            if feat.is_categorical:
                codes = np.where(seen, values[:, j], 0.0)
                if np.any(seen & (codes != np.round(codes))):
                    raise IndexError(f"{feat.name}: non-integer category code")
                tokens.append(T.embedding(table, codes.astype(np.intp), seen))
            else:
                rows = T.embedding(table, seen.astype(np.intp), np.ones_like(seen))
                scale = np.where(seen, values[:, j], 1.0)[:, None]
                tokens.append(rows * scale)
        return T.stack(tokens, axis=1) + self.bias

    def encode(self, tokens: Tensor, observed: np.ndarray, training: bool = False,
               rng=None, record: bool = False) -> Tensor:
        mask = build_mask(observed)
        attention = []
        for layer in self.layers:
            tokens, weights = layer(tokens, mask, observed, training=training, rng=rng)
            if record:
                attention.append(weights.data.copy())
        if record:
            self.last_attention = attention
        return tokens

    def classify(self, tokens: Tensor) -> Tensor:
        b, n, d = tokens.shape
        return T.reshape(tokens, (b, n * d)) @ self.head_w + self.head_b

    def logits(self, inputs: NaimBatch, training: bool = False, rng=None, record: bool = False) -> Tensor:
        observed = np.asarray(inputs.observed, dtype=bool)
        tokens = self.embed(inputs)
        return self.classify(self.encode(tokens, observed, training=training, rng=rng, record=record))

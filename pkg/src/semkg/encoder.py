"""Trainable sequence encoder with span mean-pooling, in plain numpy.

The encoder embeds a token sequence (token + position + segment embeddings),
runs pre-norm multi-head self-attention blocks with GELU feed-forward
networks, and mean-pools the output vectors under the head/relation/tail
spans into three vectors of width ``k``.  Forward and backward passes are
implemented directly in float64 so that every parameter gradient is exact
and checkable against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import erf

from .text import EncodedTriple, PAD

LN_EPS = 1e-5
SEGMENT_SPECIAL, SEGMENT_HEAD, SEGMENT_REL, SEGMENT_TAIL = 0, 1, 2, 3


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters; ``k`` is both hidden and output width."""

    vocab_size: int
    k: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 256
    max_len: int = 128
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.vocab_size, self.k, self.n_heads, self.ffn_dim, self.max_len) <= 0:
            raise ValueError("all encoder dimensions must be positive")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.k % self.n_heads != 0:
            raise ValueError(f"k={self.k} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


class EmbeddingTriple(NamedTuple):
    """The pooled head/relation/tail vectors for one triple."""

    h: np.ndarray
    r: np.ndarray
    t: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.h, self.r, self.t])

    @classmethod
    def from_array(cls, row: np.ndarray) -> "EmbeddingTriple":
        return cls(row[0], row[1], row[2])


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """N(0, std^2) samples redrawn until they fall within +/- 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    """Seed-deterministic parameter dictionary in float64."""
    rng = np.random.default_rng(cfg.seed)
    k, f = cfg.k, cfg.ffn_dim
    params = {
        "tok_emb": _trunc_normal(rng, (cfg.vocab_size, k)),
        "pos_emb": _trunc_normal(rng, (cfg.max_len, k)),
        "seg_emb": _trunc_normal(rng, (4, k)),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        params[p + "ln1.g"] = np.ones(k)
        params[p + "ln1.b"] = np.zeros(k)
        for name in ("wq", "wk", "wv", "wo"):
            params[p + f"attn.{name}"] = _trunc_normal(rng, (k, k))
        for name in ("bq", "bk", "bv", "bo"):
            params[p + f"attn.{name}"] = np.zeros(k)
        params[p + "ln2.g"] = np.ones(k)
        params[p + "ln2.b"] = np.zeros(k)
        params[p + "ffn.w1"] = _trunc_normal(rng, (k, f))
        params[p + "ffn.b1"] = np.zeros(f)
        params[p + "ffn.w2"] = _trunc_normal(rng, (f, k))
        params[p + "ffn.b2"] = np.zeros(k)
    return params


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


@dataclass
class PackedBatch:
    """Array view of a batch of encoded triples (equal padded length)."""

    ids: np.ndarray        # (N, L) int
    mask: np.ndarray       # (N, L) bool, True for unpadded positions
    seg: np.ndarray        # (N, L) int, segment id per position
    spans: np.ndarray      # (N, 3, 2) int, half-open span bounds
    pool: np.ndarray       # (N, 3, L) float, mean-pooling weights

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def pack_batch(batch: Sequence[EncodedTriple]) -> PackedBatch:
    """Stack encoded triples into arrays and precompute pooling weights."""
    if not batch:
        raise ValueError("empty batch")
    lengths = {len(e.token_ids) for e in batch}
    if len(lengths) != 1:
        raise ValueError("all sequences in a batch must be padded to equal length")
    n, length = len(batch), lengths.pop()
    ids = np.array([e.token_ids for e in batch], dtype=np.int64)
    mask = np.zeros((n, length), dtype=bool)
    seg = np.zeros((n, length), dtype=np.int64)
    spans = np.zeros((n, 3, 2), dtype=np.int64)
    pool = np.zeros((n, 3, length))
    for row, e in enumerate(batch):
        mask[row, :e.attention_len] = True
        for s, (start, end) in enumerate(e.spans):
            if not 0 < start < end <= e.attention_len:
                raise ValueError(f"span ({start}, {end}) outside sequence of "
                                 f"length {e.attention_len}")
            seg[row, start:end] = s + 1
            spans[row, s] = (start, end)
            pool[row, s, start:end] = 1.0 / (end - start)
    return PackedBatch(ids=ids, mask=mask, seg=seg, spans=spans, pool=pool)


def _gelu(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    return x * cdf, cdf


def _gelu_grad(x, cdf):
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _scatter_rows(dest: np.ndarray, ids: np.ndarray, rows: np.ndarray) -> None:
    """dest[ids[i]] += rows[i], grouped for speed (ids repeat heavily)."""
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    boundaries = np.flatnonzero(np.diff(sorted_ids)) + 1
    starts = np.concatenate([[0], boundaries])
    sums = np.add.reduceat(rows[order], starts, axis=0)
    dest[sorted_ids[starts]] += sums


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _linear(x, w, b):
    return x @ w + b


def _linear_backward(x, w, dy):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    dw = flat_x.T @ flat_dy
    db = flat_dy.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def _split_heads(x, n_heads):
    n, length, k = x.shape
    return x.reshape(n, length, n_heads, k // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, h, length, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, length, h * dh)


class Encoder:
    """Encoder with explicit forward/backward over a parameter dictionary.

    ``backward`` consumes the cache stored by the most recent ``forward``
    call (same batch, same mode; dropout masks are replayed from the cache)
    and returns d(sum of <upstream, output>)/d(parameter) for every
    parameter tensor.
    """

    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.params = init_params(cfg) if params is None else params
        self._cache = None

    def forward(self, batch: PackedBatch | Sequence[EncodedTriple],
                train_mode: bool = False,
                rng: np.random.Generator | None = None,
                keep_cache: bool = True) -> np.ndarray:
        """Pooled (N, 3, k) head/relation/tail vectors for a batch.

        ``keep_cache=False`` skips storing the activations backward needs;
        use it for read-only scoring (also safe for concurrent callers).
        """
        if not isinstance(batch, PackedBatch):
            batch = pack_batch(batch)
        cfg, p = self.cfg, self.params
        use_dropout = train_mode and cfg.dropout_rate > 0.0
        if use_dropout and rng is None:
            rng = np.random.default_rng(cfg.seed)
        keep = 1.0 - cfg.dropout_rate

        def dropout_scale(shape):
            if not use_dropout:
                return None
            return (rng.random(shape) >= cfg.dropout_rate) / keep

        n, length = batch.ids.shape
        if length > cfg.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {cfg.max_len}")
        x = p["tok_emb"][batch.ids] + p["pos_emb"][:length] + p["seg_emb"][batch.seg]
        emb_scale = dropout_scale(x.shape)
        if emb_scale is not None:
            x = x * emb_scale

        scale = 1.0 / math.sqrt(cfg.k // cfg.n_heads)
        # additive key mask: 0 for real tokens, -inf for padding
        key_bias = np.where(batch.mask, 0.0, -np.inf)[:, None, None, :]
        layer_caches = []
        for i in range(cfg.n_layers):
            pre = f"layers.{i}."
            a, ln1_cache = _layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            wqkv = np.concatenate([p[pre + "attn.wq"], p[pre + "attn.wk"],
                                   p[pre + "attn.wv"]], axis=1)
            bqkv = np.concatenate([p[pre + "attn.bq"], p[pre + "attn.bk"],
                                   p[pre + "attn.bv"]])
            qkv = _linear(a, wqkv, bqkv)
            q, k_, v = (_split_heads(part, cfg.n_heads)
                        for part in np.split(qkv, 3, axis=-1))
            logits = (q @ k_.transpose(0, 1, 3, 2)) * scale
            logits += key_bias
            logits -= logits.max(axis=-1, keepdims=True)
            expl = np.exp(logits)
            probs = expl / expl.sum(axis=-1, keepdims=True)
            ctx = _merge_heads(probs @ v)
            attn_out = _linear(ctx, p[pre + "attn.wo"], p[pre + "attn.bo"])
            attn_scale = dropout_scale(attn_out.shape)
            if attn_scale is not None:
                attn_out = attn_out * attn_scale
            x = x + attn_out

            f, ln2_cache = _layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            h1 = _linear(f, p[pre + "ffn.w1"], p[pre + "ffn.b1"])
            u, gelu_cdf = _gelu(h1)
            h2 = _linear(u, p[pre + "ffn.w2"], p[pre + "ffn.b2"])
            ffn_scale = dropout_scale(h2.shape)
            if ffn_scale is not None:
                h2 = h2 * ffn_scale
            x = x + h2
            if keep_cache:
                layer_caches.append(dict(a=a, ln1=ln1_cache, q=q, k=k_, v=v,
                                         probs=probs, ctx=ctx, attn_scale=attn_scale,
                                         f=f, ln2=ln2_cache, h1=h1, u=u,
                                         gelu_cdf=gelu_cdf, ffn_scale=ffn_scale))

        pooled = batch.pool @ x
        if keep_cache:
            self._cache = dict(batch=batch, emb_scale=emb_scale, layers=layer_caches,
                               length=length, shape=pooled.shape, scale=scale)
        return pooled

    def forward_triples(self, batch, train_mode=False, rng=None) -> list[EmbeddingTriple]:
        """Forward pass returning one EmbeddingTriple per example."""
        pooled = self.forward(batch, train_mode=train_mode, rng=rng)
        return [EmbeddingTriple.from_array(row) for row in pooled]

    def backward(self, upstream: np.ndarray) -> dict[str, np.ndarray]:
        """Exact parameter gradients of sum(<upstream, pooled output>)."""
        if self._cache is None:
            raise ValueError("backward called before forward")
        if upstream.shape != self._cache["shape"]:
            raise ValueError(f"upstream shape {upstream.shape} does not match "
                             f"forward output {self._cache['shape']}")
        cfg, p = self.cfg, self.params
        cache = self._cache
        batch, length = cache["batch"], cache["length"]
        grads = zero_grads(p)

        dx = batch.pool.transpose(0, 2, 1) @ upstream

        for i in reversed(range(cfg.n_layers)):
            pre = f"layers.{i}."
            lc = cache["layers"][i]

            dh2 = dx if lc["ffn_scale"] is None else dx * lc["ffn_scale"]
            du, dw2, db2 = _linear_backward(lc["u"], p[pre + "ffn.w2"], dh2)
            grads[pre + "ffn.w2"] += dw2
            grads[pre + "ffn.b2"] += db2
            dh1 = du * _gelu_grad(lc["h1"], lc["gelu_cdf"])
            df, dw1, db1 = _linear_backward(lc["f"], p[pre + "ffn.w1"], dh1)
            grads[pre + "ffn.w1"] += dw1
            grads[pre + "ffn.b1"] += db1
            dx_mid, dg2, dbeta2 = _layer_norm_backward(df, lc["ln2"])
            grads[pre + "ln2.g"] += dg2
            grads[pre + "ln2.b"] += dbeta2
            dx = dx + dx_mid

            dattn = dx if lc["attn_scale"] is None else dx * lc["attn_scale"]
            dctx, dwo, dbo = _linear_backward(lc["ctx"], p[pre + "attn.wo"], dattn)
            grads[pre + "attn.wo"] += dwo
            grads[pre + "attn.bo"] += dbo
            dctx = _split_heads(dctx, cfg.n_heads)
            dprobs = dctx @ lc["v"].transpose(0, 1, 3, 2)
            dv = lc["probs"].transpose(0, 1, 3, 2) @ dctx
            dlogits = lc["probs"] * (dprobs - (dprobs * lc["probs"]).sum(axis=-1,
                                                                         keepdims=True))
            dq = (dlogits @ lc["k"]) * cache["scale"]
            dk = (dlogits.transpose(0, 1, 3, 2) @ lc["q"]) * cache["scale"]

            dqkv = np.concatenate([_merge_heads(dq), _merge_heads(dk),
                                   _merge_heads(dv)], axis=-1)
            wqkv = np.concatenate([p[pre + "attn.wq"], p[pre + "attn.wk"],
                                   p[pre + "attn.wv"]], axis=1)
            da, dwqkv, dbqkv = _linear_backward(lc["a"], wqkv, dqkv)
            for part, (dw, db) in enumerate(zip(np.split(dwqkv, 3, axis=1),
                                                np.split(dbqkv, 3))):
                name = "qkv"[part]
                grads[pre + f"attn.w{name}"] += dw
                grads[pre + f"attn.b{name}"] += db
            dx_in, dg1, dbeta1 = _layer_norm_backward(da, lc["ln1"])
            grads[pre + "ln1.g"] += dg1
            grads[pre + "ln1.b"] += dbeta1
            dx = dx + dx_in

        if cache["emb_scale"] is not None:
            dx = dx * cache["emb_scale"]
        flat = np.ascontiguousarray(dx.reshape(-1, cfg.k))
        _scatter_rows(grads["tok_emb"], batch.ids.ravel(), flat)
        grads["pos_emb"][:length] += dx.sum(axis=0)
        _scatter_rows(grads["seg_emb"], batch.seg.ravel(), flat)
        return grads


__all__ = ["EncoderConfig", "EmbeddingTriple", "Encoder", "PackedBatch",
           "init_params", "zero_grads", "pack_batch", "PAD"]

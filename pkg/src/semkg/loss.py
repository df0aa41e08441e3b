"""Translation-based probabilistic objective and negative sampling.

The score of a triple embedding is ``b - 0.5 * ||h + r - t||^2``.  Training
maximizes the score of observed triples against corrupted ones, either via
the exact softmax likelihood (small graphs only) or via the
negative-sampling approximation used by the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .encoder import EmbeddingTriple, Encoder, pack_batch
from .errors import SamplingError
from .graph import KnowledgeGraph, Triple
from .text import Tokenizer, encode_triplet


@dataclass(frozen=True)
class LossConfig:
    """Margin, negative-sample count, and which elements get corrupted."""

    b: float = 7.0
    n_ns: int = 5
    corrupt_heads: bool = True
    corrupt_relations: bool = True
    corrupt_tails: bool = True

    def __post_init__(self):
        if self.n_ns < 1:
            raise ValueError("n_ns must be >= 1")
        if not (self.corrupt_heads or self.corrupt_relations or self.corrupt_tails):
            raise ValueError("at least one corruption mode must be enabled")

    @property
    def n_modes(self) -> int:
        return int(self.corrupt_heads) + int(self.corrupt_relations) + int(self.corrupt_tails)


@dataclass
class NegativeBatch:
    """Corrupted triples for one positive, one list per corruption mode."""

    heads: list[Triple] = field(default_factory=list)
    relations: list[Triple] = field(default_factory=list)
    tails: list[Triple] = field(default_factory=list)

    def all(self) -> list[Triple]:
        return self.heads + self.relations + self.tails


def scores_and_residuals(embeddings: np.ndarray, b: float):
    """Scores b - 0.5*||h+r-t||^2 and residuals h+r-t for an (N, 3, k) batch."""
    residual = embeddings[:, 0] + embeddings[:, 1] - embeddings[:, 2]
    return b - 0.5 * np.sum(residual * residual, axis=-1), residual


def score(e: EmbeddingTriple, b: float) -> float:
    """Score of a single embedding triple."""
    if not (e.h.shape == e.r.shape == e.t.shape):
        raise ValueError("h, r, t must have equal length")
    f, _ = scores_and_residuals(e.stack()[None], b)
    return float(f[0])


def ns_loss_from_scores(f_pos: np.ndarray, f_negs: np.ndarray):
    """Per-positive negative-sampling loss and its score gradients.

    ``f_pos`` has shape (B,), ``f_negs`` shape (B, n).  The loss of row i is
    -log sigmoid(f_pos[i]) - sum_j log(1 - sigmoid(f_negs[i, j])), computed
    with stable log-sum-exp forms.
    """
    f_pos = np.asarray(f_pos, dtype=np.float64)
    f_negs = np.asarray(f_negs, dtype=np.float64)
    loss = np.logaddexp(0.0, -f_pos) + np.logaddexp(0.0, f_negs).sum(axis=-1)
    d_pos = expit(f_pos) - 1.0
    d_negs = expit(f_negs)
    return loss, d_pos, d_negs


def ns_loss(pos: EmbeddingTriple, negs: list[EmbeddingTriple], b: float):
    """Negative-sampling loss for one positive against its corruptions.

    Returns the scalar loss together with exact gradients with respect to
    every (h, r, t) vector passed in, as EmbeddingTriples in matching order.
    """
    if not negs:
        raise ValueError("negs must be nonempty")
    stacked = np.stack([pos.stack()] + [n.stack() for n in negs])
    f, residual = scores_and_residuals(stacked, b)
    loss, d_pos, d_negs = ns_loss_from_scores(f[:1], f[None, 1:])
    df = np.concatenate([d_pos, d_negs[0]])
    # df/dh = df/dr = -residual, df/dt = +residual
    grad = df[:, None, None] * np.stack([-residual, -residual, residual], axis=1)
    return (float(loss[0]),
            EmbeddingTriple.from_array(grad[0]),
            [EmbeddingTriple.from_array(row) for row in grad[1:]])


def _draw_corruptions(rng: np.random.Generator, pool_size: int, n: int,
                      exclude: int, is_positive, describe: str) -> list[int]:
    """Uniform draw without replacement from the admissible candidate pool.

    The pool is {0..pool_size-1} minus ``exclude`` minus known positives.
    A batched partial draw covers the common case; a full permutation is
    the exact fallback.
    """
    if pool_size <= n:
        raise SamplingError(f"only {pool_size - 1} candidates exist for {describe}")

    def admissible_prefix(candidates):
        out = []
        for c in candidates:
            c = int(c)
            if c == exclude or is_positive(c):
                continue
            out.append(c)
            if len(out) == n:
                break
        return out

    fast = min(pool_size, max(4 * n, n + 8))
    picked = admissible_prefix(rng.choice(pool_size, size=fast, replace=False))
    if len(picked) == n:
        return picked
    picked = admissible_prefix(rng.permutation(pool_size))
    if len(picked) < n:
        raise SamplingError(f"fewer than {n} admissible candidates for {describe}")
    return picked


def sample_negatives(g: KnowledgeGraph, pos: Triple, cfg: LossConfig,
                     rng: np.random.Generator) -> NegativeBatch:
    """Draw n_ns corrupted triples per enabled mode for one positive.

    Candidates that collide with any known-positive triple are rejected and
    redrawn, so every emitted triple is a true negative; draws within one
    list are without replacement.
    """
    h, r, t = pos.head, pos.relation, pos.tail
    index = g.positive_index
    batch = NegativeBatch()
    if cfg.corrupt_heads:
        picked = _draw_corruptions(
            rng, g.num_entities, cfg.n_ns, h,
            lambda c: (c, r, t) in index, f"heads of {pos}")
        batch.heads = [Triple(c, r, t) for c in picked]
    if cfg.corrupt_relations:
        picked = _draw_corruptions(
            rng, g.num_relations, cfg.n_ns, r,
            lambda c: (h, c, t) in index, f"relations of {pos}")
        batch.relations = [Triple(h, c, t) for c in picked]
    if cfg.corrupt_tails:
        picked = _draw_corruptions(
            rng, g.num_entities, cfg.n_ns, t,
            lambda c: (h, r, c) in index, f"tails of {pos}")
        batch.tails = [Triple(h, r, c) for c in picked]
    return batch


def softmax_probs(scores: np.ndarray) -> np.ndarray:
    """Softmax over candidate scores, log-sum-exp stabilized."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.exp(scores - logsumexp(scores))


def _encode_scores(g: KnowledgeGraph, encoder: Encoder, tok: Tokenizer,
                   triples: list[Triple], b: float,
                   batch_size: int = 256) -> np.ndarray:
    """Eval-mode scores of a list of triples via the encoder."""
    scores = np.empty(len(triples))
    for start in range(0, len(triples), batch_size):
        chunk = triples[start:start + batch_size]
        packed = pack_batch([encode_triplet(tok, g, t) for t in chunk])
        pooled = encoder.forward(packed, train_mode=False, keep_cache=False)
        scores[start:start + len(chunk)], _ = scores_and_residuals(pooled, b)
    return scores


def _candidates(g: KnowledgeGraph, t: Triple, dimension: str) -> list[Triple]:
    if dimension == "head":
        return [Triple(c, t.relation, t.tail) for c in range(g.num_entities)]
    if dimension == "relation":
        return [Triple(t.head, c, t.tail) for c in range(g.num_relations)]
    if dimension == "tail":
        return [Triple(t.head, t.relation, c) for c in range(g.num_entities)]
    raise ValueError(dimension)


def softmax_head_distribution(g, encoder, tok, r: int, t: int, b: float) -> np.ndarray:
    """Pr(h | r, t) over every entity."""
    scores = _encode_scores(g, encoder, tok,
                            _candidates(g, Triple(0, r, t), "head"), b)
    return softmax_probs(scores)


def softmax_relation_distribution(g, encoder, tok, h: int, t: int, b: float) -> np.ndarray:
    """Pr(r | h, t) over every relation."""
    scores = _encode_scores(g, encoder, tok,
                            _candidates(g, Triple(h, 0, t), "relation"), b)
    return softmax_probs(scores)


def softmax_tail_distribution(g, encoder, tok, h: int, r: int, b: float) -> np.ndarray:
    """Pr(t | h, r) over every entity."""
    scores = _encode_scores(g, encoder, tok,
                            _candidates(g, Triple(h, r, 0), "tail"), b)
    return softmax_probs(scores)


def softmax_prob_head(g, encoder, tok, r: int, t: int, h: int, b: float) -> float:
    return float(softmax_head_distribution(g, encoder, tok, r, t, b)[h])


def softmax_prob_relation(g, encoder, tok, h: int, t: int, r: int, b: float) -> float:
    return float(softmax_relation_distribution(g, encoder, tok, h, t, b)[r])


def softmax_prob_tail(g, encoder, tok, h: int, r: int, t: int, b: float) -> float:
    return float(softmax_tail_distribution(g, encoder, tok, h, r, b)[t])


def full_nll_loss(g, encoder, tok, batch: list[Triple], b: float) -> float:
    """Exact negative log likelihood summed over a batch of triples.

    Costs O(|E| + |R|) encoder forwards per triple; intended for small
    graphs and as an oracle for the negative-sampling approximation.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    total = 0.0
    for t in batch:
        for dist, idx in ((softmax_head_distribution(g, encoder, tok, t.relation,
                                                     t.tail, b), t.head),
                          (softmax_relation_distribution(g, encoder, tok, t.head,
                                                         t.tail, b), t.relation),
                          (softmax_tail_distribution(g, encoder, tok, t.head,
                                                     t.relation, b), t.tail)):
            total -= float(np.log(dist[idx]))
    return total


def full_nll_loss_and_grads(g, encoder: Encoder, tok, batch: list[Triple],
                            b: float):
    """Exact softmax likelihood loss with its parameter gradients.

    For each triple and each corrupted dimension, every candidate triple is
    encoded and receives upstream weight (p_candidate - 1[gold]); suitable
    as a small-graph training objective and as a descent oracle.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    from .encoder import zero_grads

    total = 0.0
    grads = zero_grads(encoder.params)
    for t in batch:
        for dimension, gold in (("head", t.head), ("relation", t.relation),
                                ("tail", t.tail)):
            candidates = _candidates(g, t, dimension)
            packed = pack_batch([encode_triplet(tok, g, c) for c in candidates])
            pooled = encoder.forward(packed, train_mode=False)
            f, residual = scores_and_residuals(pooled, b)
            log_z = logsumexp(f)
            total += float(log_z - f[gold])
            df = np.exp(f - log_z)
            df[gold] -= 1.0
            upstream = df[:, None, None] * np.stack([-residual, -residual,
                                                     residual], axis=1)
            for name, grad in encoder.backward(upstream).items():
                grads[name] += grad
    return total, grads

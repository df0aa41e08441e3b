"""Lookup-table baseline models: TransE, DistMult, ComplEx, RotatE.

Each model keeps an entity table and a relation table and scores a triple
with a closed-form function.  Complex-valued models store the real halves
in the first k columns and the imaginary halves in the last k; RotatE
relations are phase angles, interpreted as unit-modulus rotations.  All
baselines train under the same negative-sampling objective as the text
encoder, with the table score standing in for the translation score.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .errors import TrainingError
from .graph import KnowledgeGraph, Triple
from .loss import LossConfig, ns_loss_from_scores, sample_negatives
from .optim import AdamW, OptimizerConfig, lr_at


@dataclass
class ShallowModel:
    kind: str
    entity_table: np.ndarray
    relation_table: np.ndarray
    k: int
    loss_history: list[tuple[int, float, float]] = field(default_factory=list,
                                                         repr=False)


# kind -> ((entity_dim(k), relation_dim(k)), score_fn(h, r, t, k))
SCORE_REGISTRY: dict[str, tuple] = {}


def register_score(kind: str, dims, fn) -> None:
    """Add a score function; ``fn(h, r, t, k)`` returns (f, (dh, dr, dt))."""
    SCORE_REGISTRY[kind] = (dims, fn)


def _dims(kind: str, k: int) -> tuple[int, int]:
    if kind not in SCORE_REGISTRY:
        raise ValueError(f"unknown shallow model kind {kind!r}")
    dims, _ = SCORE_REGISTRY[kind]
    return dims(k)


def init_shallow(kind: str, n_entities: int, n_relations: int, k: int,
                 seed: int = 0) -> ShallowModel:
    """Tables initialized uniform(-6/sqrt(k), 6/sqrt(k))."""
    de, dr = _dims(kind, k)
    rng = np.random.default_rng(seed)
    bound = 6.0 / math.sqrt(k)
    return ShallowModel(
        kind=kind,
        entity_table=rng.uniform(-bound, bound, size=(n_entities, de)),
        relation_table=rng.uniform(-bound, bound, size=(n_relations, dr)),
        k=k,
    )


def _transe(h, r, t, k):
    res = h + r - t
    norm = np.sqrt(np.sum(res * res, axis=-1))
    safe = np.maximum(norm, 1e-12)[..., None]
    return -norm, (-res / safe, -res / safe, res / safe)


def _distmult(h, r, t, k):
    return np.sum(h * r * t, axis=-1), (r * t, h * t, h * r)


def _split(x, k):
    return x[..., :k], x[..., k:]


def _complex(h, r, t, k):
    h_re, h_im = _split(h, k)
    r_re, r_im = _split(r, k)
    t_re, t_im = _split(t, k)
    f = np.sum((r_re * h_re - r_im * h_im) * t_re
               + (r_re * h_im + r_im * h_re) * t_im, axis=-1)
    dh = np.concatenate([r_re * t_re + r_im * t_im,
                         -r_im * t_re + r_re * t_im], axis=-1)
    dr = np.concatenate([h_re * t_re + h_im * t_im,
                         -h_im * t_re + h_re * t_im], axis=-1)
    dt = np.concatenate([r_re * h_re - r_im * h_im,
                         r_re * h_im + r_im * h_re], axis=-1)
    return f, (dh, dr, dt)


def _rotate(h, theta, t, k):
    h_re, h_im = _split(h, k)
    t_re, t_im = _split(t, k)
    c, s = np.cos(theta), np.sin(theta)
    u_re = h_re * c - h_im * s
    u_im = h_re * s + h_im * c
    d_re, d_im = u_re - t_re, u_im - t_im
    f = -np.sum(d_re * d_re + d_im * d_im, axis=-1)
    dh = -2.0 * np.concatenate([d_re * c + d_im * s,
                                -d_re * s + d_im * c], axis=-1)
    dtheta = -2.0 * (d_re * (-u_im) + d_im * u_re)
    dt = 2.0 * np.concatenate([d_re, d_im], axis=-1)
    return f, (dh, dtheta, dt)


register_score("transe", lambda k: (k, k), _transe)
register_score("distmult", lambda k: (k, k), _distmult)
register_score("complex", lambda k: (2 * k, 2 * k), _complex)
register_score("rotate", lambda k: (2 * k, k), _rotate)

SHALLOW_KINDS = ("transe", "distmult", "complex", "rotate")


def score_with_grads(m: ShallowModel, h_vecs: np.ndarray, r_vecs: np.ndarray,
                     t_vecs: np.ndarray):
    """Scores and per-vector gradients for stacked (B, dim) inputs."""
    if m.kind not in SCORE_REGISTRY:
        raise ValueError(f"unknown shallow model kind {m.kind!r}")
    _, fn = SCORE_REGISTRY[m.kind]
    return fn(h_vecs, r_vecs, t_vecs, m.k)


def shallow_scores(m: ShallowModel, heads, relations, tails) -> np.ndarray:
    """Vectorized scores for id arrays of equal shape."""
    f, _ = score_with_grads(m, m.entity_table[heads], m.relation_table[relations],
                            m.entity_table[tails])
    return f


def shallow_score(m: ShallowModel, t: Triple) -> float:
    return float(shallow_scores(m, np.array([t.head]), np.array([t.relation]),
                                np.array([t.tail]))[0])


def train_shallow(g: KnowledgeGraph, m: ShallowModel, cfg: LossConfig,
                  opt: OptimizerConfig) -> ShallowModel:
    """Negative-sampling training of the lookup tables; returns the model.

    The per-step loss history is recorded on the model.  Raises
    TrainingError on divergence (non-finite loss).
    """
    if not g.train:
        raise ValueError("graph has no training triples")
    root = np.random.SeedSequence(opt.seed)
    shuffle_rng, neg_rng = (np.random.default_rng(s) for s in root.spawn(2))
    params = {"entity_table": m.entity_table, "relation_table": m.relation_table}
    optimizer = AdamW(opt, params)

    n = len(g.train)
    batches_per_epoch = math.ceil(n / opt.batch_size)
    total_steps = max(opt.epochs * batches_per_epoch, 1)
    step = 0

    for _ in range(opt.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, opt.batch_size):
            batch = [g.train[i] for i in order[start:start + opt.batch_size]]
            negatives = [sample_negatives(g, t, cfg, neg_rng) for t in batch]
            triples = list(batch)
            for nb in negatives:
                triples.extend(nb.all())
            heads = np.array([t.head for t in triples])
            rels = np.array([t.relation for t in triples])
            tails = np.array([t.tail for t in triples])

            f, (dh, dr, dt) = score_with_grads(
                m, m.entity_table[heads], m.relation_table[rels],
                m.entity_table[tails])
            n_pos = len(batch)
            per_pos = len(negatives[0].all())
            _, d_pos, d_negs = ns_loss_from_scores(
                f[:n_pos], f[n_pos:].reshape(n_pos, per_pos))
            # each positive appears once per enabled corruption mode
            df = np.concatenate([cfg.n_modes * d_pos, d_negs.ravel()])
            loss = float(cfg.n_modes * np.logaddexp(0.0, -f[:n_pos]).sum()
                         + np.logaddexp(0.0, f[n_pos:]).sum())
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {step}")

            grads = {"entity_table": np.zeros_like(m.entity_table),
                     "relation_table": np.zeros_like(m.relation_table)}
            np.add.at(grads["entity_table"], heads, df[:, None] * dh)
            np.add.at(grads["relation_table"], rels, df[:, None] * dr)
            np.add.at(grads["entity_table"], tails, df[:, None] * dt)

            lr = lr_at(opt, step, total_steps)
            optimizer.apply(params, grads, lr)
            step += 1
            m.loss_history.append((step, lr, loss))
    return m


def save_shallow(directory: str, tag: str, m: ShallowModel,
                 manifest_extra: dict | None = None) -> str:
    os.makedirs(directory, exist_ok=True)
    base = os.path.join(directory, f"checkpoint_{tag}")
    tensorio.save_tensors(base + ".params.bin",
                          {"entity_table": m.entity_table,
                           "relation_table": m.relation_table})
    manifest = {"model": m.kind, "k": m.k,
                "n_entities": int(m.entity_table.shape[0]),
                "n_relations": int(m.relation_table.shape[0])}
    if manifest_extra:
        manifest.update(manifest_extra)
    tensorio.save_manifest(base + ".json", manifest)
    return base + ".json"


def load_shallow(manifest_path: str) -> tuple[ShallowModel, dict]:
    manifest = tensorio.load_manifest(manifest_path)
    kind = manifest.get("model")
    if kind not in SHALLOW_KINDS:
        raise ValueError(f"{manifest_path} is not a shallow-model checkpoint")
    tensors = tensorio.load_tensors(manifest_path[:-len(".json")] + ".params.bin")
    m = ShallowModel(kind=kind, entity_table=tensors["entity_table"],
                     relation_table=tensors["relation_table"], k=manifest["k"])
    return m, manifest

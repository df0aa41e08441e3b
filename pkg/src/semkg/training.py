"""End-to-end training loop for the text-encoder model.

Each step samples corruptions for every positive in the batch, encodes the
positives and all corrupted triples in one forward pass, applies the
negative-sampling loss over the three corruption sets, backpropagates, and
takes a warmup-scheduled AdamW step.  Checkpoints (parameters, optimizer
state, JSON manifest) are written per epoch plus a final one.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import tensorio
from .encoder import Encoder, EncoderConfig, PackedBatch, pack_batch
from .errors import TrainingError
from .graph import KnowledgeGraph, Triple
from .loss import LossConfig, NegativeBatch, sample_negatives, scores_and_residuals
from .optim import AdamW, OptimizerConfig, clip_grads, lr_at
from .text import EncodingCache, Tokenizer, encode_triplet


@dataclass
class TrainState:
    encoder: Encoder
    optimizer: AdamW
    step: int = 0
    loss_history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def params(self):
        return self.encoder.params


def encode_training_batch(g: KnowledgeGraph, tok: Tokenizer,
                          positives: list[Triple],
                          negatives: list[NegativeBatch],
                          cache: EncodingCache | None = None) -> PackedBatch:
    """Pack positives followed by every corrupted triple, in order."""
    triples = list(positives)
    for nb in negatives:
        triples.extend(nb.all())
    if cache is not None:
        return pack_batch(cache.get_many(triples))
    return pack_batch([encode_triplet(tok, g, t) for t in triples])


def loss_and_upstream(pooled: np.ndarray, n_positives: int, n_modes: int,
                      b: float) -> tuple[float, np.ndarray]:
    """Summed batch loss and d(loss)/d(pooled vectors).

    ``pooled`` holds the positives first.  Each positive contributes one
    -log sigmoid(f) term per corruption mode; every corrupted triple
    contributes -log(1 - sigmoid(f)).
    """
    f, residual = scores_and_residuals(pooled, b)
    f_pos, f_neg = f[:n_positives], f[n_positives:]
    loss = (n_modes * np.logaddexp(0.0, -f_pos).sum()
            + np.logaddexp(0.0, f_neg).sum())
    df = np.concatenate([n_modes * (expit(f_pos) - 1.0), expit(f_neg)])
    upstream = df[:, None, None] * np.stack([-residual, -residual, residual], axis=1)
    return float(loss), upstream


def batch_loss(encoder: Encoder, g: KnowledgeGraph, tok: Tokenizer,
               positives: list[Triple], negatives: list[NegativeBatch],
               b: float) -> float:
    """Eval-mode loss of a batch with fixed negatives; pure in the params."""
    nb = negatives[0]
    n_modes = int(bool(nb.heads)) + int(bool(nb.relations)) + int(bool(nb.tails))
    packed = encode_training_batch(g, tok, positives, negatives)
    pooled = encoder.forward(packed, train_mode=False)
    loss, _ = loss_and_upstream(pooled, len(positives), n_modes, b)
    return loss


def train_step(state: TrainState, g: KnowledgeGraph, tok: Tokenizer,
               batch: list[Triple], loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
               total_steps: int, neg_rng: np.random.Generator,
               dropout_rng: np.random.Generator,
               negatives: list[NegativeBatch] | None = None,
               cache: EncodingCache | None = None) -> TrainState:
    """One optimization step over a batch of positive triples."""
    if not batch:
        raise ValueError("batch must be nonempty")
    if negatives is None:
        negatives = [sample_negatives(g, t, loss_cfg, neg_rng) for t in batch]
    packed = encode_training_batch(g, tok, batch, negatives, cache)
    pooled = state.encoder.forward(packed, train_mode=True, rng=dropout_rng)
    loss, upstream = loss_and_upstream(pooled, len(batch), loss_cfg.n_modes,
                                       loss_cfg.b)
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss at step {state.step}")
    grads = state.encoder.backward(upstream)
    if any(not np.all(np.isfinite(v)) for v in grads.values()):
        raise TrainingError(f"non-finite gradient at step {state.step}")
    clip_grads(grads, opt_cfg.grad_clip_norm)
    lr = lr_at(opt_cfg, state.step, total_steps)
    state.optimizer.apply(state.encoder.params, grads, lr)
    state.step += 1
    state.loss_history.append((state.step, lr, loss))
    return state


def save_checkpoint(directory: str, tag: str, encoder: Encoder,
                    optimizer: AdamW | None, step: int, epoch: int,
                    manifest_extra: dict | None = None) -> str:
    os.makedirs(directory, exist_ok=True)
    base = os.path.join(directory, f"checkpoint_{tag}")
    tensorio.save_tensors(base + ".params.bin", encoder.params)
    if optimizer is not None:
        tensorio.save_tensors(base + ".opt.bin", optimizer.state_tensors())
    manifest = {
        "model": "lass",
        "step": step,
        "epoch": epoch,
        "encoder": encoder.cfg.to_dict(),
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    tensorio.save_manifest(base + ".json", manifest)
    return base + ".json"


def load_checkpoint(manifest_path: str) -> tuple[Encoder, dict]:
    """Rebuild an encoder from a checkpoint manifest path."""
    manifest = tensorio.load_manifest(manifest_path)
    if manifest.get("model") != "lass":
        raise ValueError(f"{manifest_path} is not an encoder checkpoint")
    cfg = EncoderConfig.from_dict(manifest["encoder"])
    base = manifest_path[:-len(".json")]
    params = tensorio.load_tensors(base + ".params.bin")
    encoder = Encoder(cfg, params)
    return encoder, manifest


def write_loss_history(path: str, history: list[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in history:
            writer.writerow([step, repr(float(lr)), repr(float(loss))])


def train(g: KnowledgeGraph, tok: Tokenizer, encoder_cfg: EncoderConfig,
          loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
          checkpoint_dir: str, manifest_extra: dict | None = None) -> TrainState:
    """Full training run: seeded shuffling, per-epoch checkpoints, loss CSV."""
    if not g.train:
        raise ValueError("graph has no training triples")
    root = np.random.SeedSequence(opt_cfg.seed)
    shuffle_rng, neg_rng, dropout_rng = (np.random.default_rng(s)
                                         for s in root.spawn(3))
    encoder = Encoder(encoder_cfg)
    state = TrainState(encoder=encoder, optimizer=AdamW(opt_cfg, encoder.params))

    n = len(g.train)
    batches_per_epoch = math.ceil(n / opt_cfg.batch_size)
    total_steps = max(opt_cfg.epochs * batches_per_epoch, 1)
    cache = EncodingCache(tok, g)

    for epoch in range(opt_cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, opt_cfg.batch_size):
            batch = [g.train[i] for i in order[start:start + opt_cfg.batch_size]]
            train_step(state, g, tok, batch, loss_cfg, opt_cfg, total_steps,
                       neg_rng, dropout_rng, cache=cache)
        save_checkpoint(checkpoint_dir, f"epoch{epoch + 1:03d}", encoder,
                        state.optimizer, state.step, epoch + 1, manifest_extra)

    save_checkpoint(checkpoint_dir, "final", encoder, state.optimizer,
                    state.step, opt_cfg.epochs, manifest_extra)
    write_loss_history(os.path.join(checkpoint_dir, "loss_history.csv"),
                       state.loss_history)
    return state

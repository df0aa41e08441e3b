"""Adaptive-moment optimizer with decoupled weight decay and warmup schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3e-5
    warmup_fraction: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 5
    batch_size: int = 128
    grad_clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive when set")


def lr_at(opt: OptimizerConfig, step: int, total_steps: int) -> float:
    """Linear ramp 0 -> lr over the warmup steps, then linear decay to 0."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup_steps = int(opt.warmup_fraction * total_steps)
    if warmup_steps > 0 and step <= warmup_steps:
        return opt.learning_rate * step / warmup_steps
    return opt.learning_rate * (total_steps - step) / max(total_steps - warmup_steps, 1)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Scale gradients in place so the global norm is at most max_norm."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
        return max_norm
    return norm


class AdamW:
    """Moment accumulators plus the decoupled-decay update rule.

    Weight decay is multiplied by the scheduled learning rate, so a zero
    learning rate leaves parameters untouched regardless of decay.
    """

    def __init__(self, cfg: OptimizerConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.step = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def apply(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float) -> None:
        if set(params) != set(grads):
            raise ValueError("gradient keys do not match parameter keys")
        cfg = self.cfg
        self.step += 1
        bc1 = 1.0 - cfg.beta1 ** self.step
        bc2 = 1.0 - cfg.beta2 ** self.step
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
            if cfg.weight_decay:
                p -= lr * cfg.weight_decay * p

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([float(self.step)])}
        for name, arr in self.m.items():
            out[f"m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"v.{name}"] = arr
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.step = int(tensors["step"][0])
        for name in self.m:
            self.m[name] = tensors[f"m.{name}"]
            self.v[name] = tensors[f"v.{name}"]

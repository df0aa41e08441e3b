"""Run configuration: a versioned YAML file wiring data, model, and outputs.

Schema (version 1)::

    schema_version: 1
    seed: 12345
    data_dir: data/benchmark
    output_dir: runs/demo
    model: lass            # or transe | distmult | complex | rotate
    threads: 1             # optional worker cap (SEMKG_THREADS also honored)
    tokenizer: {min_count: 1}
    encoder: {k: 64, n_layers: 2, n_heads: 4, ffn_dim: 256,
              max_len: 128, dropout_rate: 0.1}
    loss: {b: 7.0, n_ns: 5, corrupt_heads: true,
           corrupt_relations: true, corrupt_tails: true}
    optimizer: {learning_rate: 3.0e-5, warmup_fraction: 0.1,
                weight_decay: 0.01, beta1: 0.9, beta2: 0.999,
                epsilon: 1.0e-8, epochs: 5, batch_size: 128,
                grad_clip_norm: null}
    shallow: {k: 128}      # required for the shallow model kinds
    eval: {cutoffs: [1, 3, 10], tie_policy: mid}

Every randomized stage derives its stream from the single top-level seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .loss import LossConfig
from .optim import OptimizerConfig
from .shallow import SHALLOW_KINDS

SCHEMA_VERSION = 1
MODELS = ("lass",) + SHALLOW_KINDS


class ConfigError(Exception):
    """A run configuration is missing or malformed; the message names the field."""


@dataclass(frozen=True)
class EvalConfig:
    cutoffs: tuple[int, ...] = (1, 3, 10)
    tie_policy: str = "mid"

    def __post_init__(self):
        if self.tie_policy != "mid":
            raise ValueError("tie_policy must be 'mid'")
        if any(k < 1 for k in self.cutoffs):
            raise ValueError("cutoffs must be positive")


@dataclass
class RunConfig:
    data_dir: str
    output_dir: str
    model: str
    seed: int = 12345
    threads: int = 1
    tokenizer_min_count: int = 1
    encoder: dict = field(default_factory=dict)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    shallow_k: int = 128
    eval: EvalConfig = field(default_factory=EvalConfig)

    def module_seeds(self) -> dict[str, int]:
        """Per-module seeds split from the top-level seed."""
        children = np.random.SeedSequence(self.seed).spawn(4)
        names = ("encoder_init", "training", "subsample", "shallow_init")
        return {name: int(child.generate_state(1)[0])
                for name, child in zip(names, children)}


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return value


def _build(cls, section: dict, name: str, overrides: dict | None = None):
    try:
        return cls(**{**section, **(overrides or {})})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{name}': {exc}") from exc


def load_run_config(path: str, seed_override: int | None = None,
                    output_override: str | None = None,
                    threads_override: int | None = None) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a YAML mapping")

    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"field 'schema_version' must be {SCHEMA_VERSION}, "
                          f"got {version!r}")
    for required in ("data_dir", "output_dir", "model"):
        if not raw.get(required):
            raise ConfigError(f"field '{required}' is required")
    model = raw["model"]
    if model not in MODELS:
        raise ConfigError(f"field 'model' must be one of {', '.join(MODELS)}, "
                          f"got {model!r}")
    data_dir = str(raw["data_dir"])
    if not os.path.isdir(data_dir):
        raise ConfigError(f"field 'data_dir': directory not found: {data_dir}")

    seed = seed_override if seed_override is not None else raw.get("seed", 12345)
    if not isinstance(seed, int):
        raise ConfigError("field 'seed' must be an integer")
    threads = (threads_override if threads_override is not None
               else raw.get("threads", _env_threads()))
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("field 'threads' must be a positive integer")

    tokenizer = _section(raw, "tokenizer")
    min_count = tokenizer.get("min_count", 1)
    if not isinstance(min_count, int) or min_count < 1:
        raise ConfigError("field 'tokenizer.min_count' must be a positive integer")

    shallow = _section(raw, "shallow")
    shallow_k = shallow.get("k", 128)
    if model in SHALLOW_KINDS and (not isinstance(shallow_k, int) or shallow_k < 1):
        raise ConfigError("field 'shallow.k' must be a positive integer")

    eval_section = _section(raw, "eval")
    if "cutoffs" in eval_section:
        eval_section = {**eval_section, "cutoffs": tuple(eval_section["cutoffs"])}

    return RunConfig(
        data_dir=data_dir,
        output_dir=str(output_override if output_override else raw["output_dir"]),
        model=model,
        seed=seed,
        threads=threads,
        tokenizer_min_count=min_count,
        encoder=_section(raw, "encoder"),
        loss=_build(LossConfig, _section(raw, "loss"), "loss"),
        optimizer=_build(OptimizerConfig, _section(raw, "optimizer"), "optimizer"),
        shallow_k=shallow_k,
        eval=_build(EvalConfig, eval_section, "eval"),
    )


def _env_threads() -> int:
    raw = os.environ.get("SEMKG_THREADS", "")
    try:
        return max(int(raw), 1)
    except ValueError:
        return 1

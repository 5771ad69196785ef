"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Unknown keys, duplicate keys and values that fail to parse are reported with
their line number. ``ExperimentConfig.to_text`` writes a snapshot that parses
back to the same config.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .prompts import ConfigurationError

SEED_ENV = "PROMPTFED_SEED"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    seed: int = 0

    # synthetic task
    num_classes: int = 20
    feature_dim: int = 32
    n_per_class: int = 200
    noise_std: float = 0.3
    max_abs_cosine: float = 0.5
    train_fraction: float = 0.8

    # partition
    partition: str = "pathological"  # pathological | dirichlet
    classes_per_client: int = 2
    dirichlet_alpha: float = 0.3
    num_clients: int = 10
    participation: float = 1.0

    # prompts and frozen tokens
    global_length: int = 8
    local_length_mode: str = "fixed"  # fixed | uniform_random
    local_length: int = 8
    local_length_min: int = 4
    local_length_max: int = 64
    init_std: float = 0.02
    token_scale: float = 3.0
    label_tokens: str = "aligned"  # aligned | random
    label_scale: float = 28.0
    label_noise: float = 0.5

    # frozen encoder and classifier
    weight_scale: float = 1.0
    bias_scale: float = 0.1
    temperature: float = 0.1

    # optimisation
    rounds: int = 50
    local_epochs: int = 1
    local_steps: int = 0  # > 0 replaces the epoch count with a fixed O
    batch_size: int = 16
    beta: float = 0.5
    lam: float = 0.6
    gamma: float = 0.8
    svd_method: str = "lapack"  # lapack | jacobi
    basis_seed: int = 0

    # ablation flags
    global_only_baseline: bool = False
    disable_refinement: bool = False
    disable_str: bool = False
    disable_sep: bool = False
    detach_override: bool = False  # True lets gradients flow through refined = G_c R

    def __post_init__(self):
        problems = validate(self)
        if problems:
            raise ConfigurationError("; ".join(problems))

    @property
    def max_local_length(self) -> int:
        return self.local_length if self.local_length_mode == "fixed" else self.local_length_max

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


def validate(cfg: ExperimentConfig) -> list[str]:
    out = []
    if not 0.0 < cfg.lam < 1.0:
        out.append(f"lam must lie in (0, 1), got {cfg.lam}")
    if cfg.gamma < 0:
        out.append(f"gamma must be >= 0, got {cfg.gamma}")
    # beta = 0 is accepted: it is the documented no-op case of the convergence sweep
    if cfg.beta < 0:
        out.append(f"beta must be >= 0, got {cfg.beta}")
    if cfg.temperature <= 0:
        out.append("temperature must be positive")
    for key in ("num_clients", "local_epochs", "batch_size", "global_length", "num_classes", "feature_dim", "n_per_class"):
        if getattr(cfg, key) < 1:
            out.append(f"{key} must be >= 1")
    if cfg.rounds < 0 or cfg.local_steps < 0:
        out.append("rounds and local_steps must be >= 0")
    if not 0.0 < cfg.participation <= 1.0:
        out.append("participation must lie in (0, 1]")
    if cfg.partition not in ("pathological", "dirichlet"):
        out.append(f"partition must be pathological or dirichlet, got {cfg.partition!r}")
    if cfg.local_length_mode not in ("fixed", "uniform_random"):
        out.append(f"local_length_mode must be fixed or uniform_random, got {cfg.local_length_mode!r}")
    if cfg.local_length < 1 or not 1 <= cfg.local_length_min <= cfg.local_length_max:
        out.append("local prompt lengths must satisfy 1 <= local_length and 1 <= local_length_min <= local_length_max")
    if cfg.label_tokens not in ("aligned", "random"):
        out.append(f"label_tokens must be aligned or random, got {cfg.label_tokens!r}")
    if cfg.svd_method not in ("lapack", "jacobi"):
        out.append(f"svd_method must be lapack or jacobi, got {cfg.svd_method!r}")
    return out


def _parse_value(raw: str, kind):
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


_KINDS = {"int": int, "float": float, "bool": bool, "str": str}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    known = {f.name: _KINDS[f.type] for f in fields(ExperimentConfig)}
    values: dict = {}
    seen_at: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen_at:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen_at[key]})")
        try:
            values[key] = _parse_value(raw, known[key])
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        seen_at[key] = lineno
    try:
        return ExperimentConfig(**values)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None


def load_config(path=None, seed: int | None = None, env=None) -> ExperimentConfig:
    """Read a config file (or the defaults), then apply seed overrides.

    ``PROMPTFED_SEED`` in the environment replaces the file's seed; an
    explicit ``seed`` argument (the CLI flag) wins over both.
    """
    cfg = ExperimentConfig() if path is None else parse_config(Path(path).read_text(encoding="utf-8"), str(path))
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "").strip():
        try:
            cfg = cfg.replace(seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg

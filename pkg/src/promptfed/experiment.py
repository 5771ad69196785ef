"""Build a federated prompt-learning experiment from an ExperimentConfig and run it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, Shard, SyntheticTask, generate, partition_dirichlet, partition_pathological
from .encoder import FrozenEncoder
from .federation import ClientState, FederationSettings, ServerState, run_round
from .objectives import LossSettings, PromptModel
from .prompts import TokenTable, max_sequence_length
from .tensor import stream

VARIANTS = ("baseline", "framework", "refinement", "full")


@dataclass
class Experiment:
    config: ExperimentConfig
    dataset: Dataset
    shards: list[Shard]
    model: PromptModel
    settings: FederationSettings
    server: ServerState
    clients: list[ClientState]

    def run(self, rounds: int | None = None, workers: int = 1, wire_log: list | None = None, on_round=None):
        """Run ``rounds`` more rounds (default: the configured count)."""
        for _ in range(self.config.rounds if rounds is None else rounds):
            report = run_round(self.server, self.clients, self.settings, self.model, workers, wire_log)
            if on_round is not None:
                on_round(report)
        return self.server


def variant_config(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    """Ablation grid row: each variant adds one component to the previous one."""
    flags = {
        "baseline": dict(global_only_baseline=True, disable_refinement=True, disable_str=True, disable_sep=True),
        "framework": dict(global_only_baseline=False, disable_refinement=True, disable_str=True, disable_sep=True),
        "refinement": dict(global_only_baseline=False, disable_refinement=False, disable_str=True, disable_sep=True),
        "full": dict(global_only_baseline=False, disable_refinement=False, disable_str=False, disable_sep=False),
    }
    if variant not in flags:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return cfg.replace(name=f"{cfg.name}-{variant}", **flags[variant])


def loss_settings(cfg: ExperimentConfig) -> LossSettings:
    return LossSettings(
        gamma=cfg.gamma,
        use_local=not cfg.global_only_baseline,
        use_refinement=not cfg.disable_refinement,
        use_stretch=not cfg.disable_str,
        use_separate=not cfg.disable_sep,
        detach_refined=not cfg.detach_override,
    )


def federation_settings(cfg: ExperimentConfig) -> FederationSettings:
    return FederationSettings(
        beta=cfg.beta,
        lam=cfg.lam,
        batch_size=cfg.batch_size,
        local_epochs=cfg.local_epochs,
        local_steps=cfg.local_steps,
        participation=cfg.participation,
        master_seed=cfg.seed,
        svd_method=cfg.svd_method,
        basis_seed=cfg.basis_seed,
        loss=loss_settings(cfg),
    )


def label_tokens(cfg: ExperimentConfig, prototypes: np.ndarray) -> np.ndarray | None:
    """Class-label embeddings.

    ``aligned`` labels sit near their class prototype, scaled so that after
    mean pooling over a layout of ``label_scale`` rows the label contributes
    roughly the prototype itself. This plays the part of the pre-aligned
    text and image spaces of a contrastive backbone; ``random`` labels carry
    no class information.
    """
    if cfg.label_tokens == "random":
        return None
    noise = stream(cfg.seed, "token/label-noise").standard_normal(prototypes.shape) / np.sqrt(prototypes.shape[1])
    return cfg.label_scale * (prototypes + cfg.label_noise * noise)


def local_lengths(cfg: ExperimentConfig) -> list[int]:
    if cfg.local_length_mode == "fixed":
        return [cfg.local_length] * cfg.num_clients
    return [
        int(stream(cfg.seed, "local-length", c).integers(cfg.local_length_min, cfg.local_length_max + 1))
        for c in range(cfg.num_clients)
    ]


def make_shards(cfg: ExperimentConfig, dataset: Dataset) -> list[Shard]:
    if cfg.partition == "pathological":
        return partition_pathological(dataset, cfg.num_clients, cfg.classes_per_client, cfg.seed)
    return partition_dirichlet(dataset, cfg.num_clients, cfg.dirichlet_alpha, cfg.seed)


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    task = SyntheticTask(
        cfg.num_classes, cfg.feature_dim, cfg.noise_std, cfg.n_per_class, cfg.seed, cfg.train_fraction, cfg.max_abs_cosine
    )
    dataset = generate(task)
    shards = make_shards(cfg, dataset)
    m = cfg.feature_dim
    encoder = FrozenEncoder.from_seed(m, cfg.seed, cfg.weight_scale, cfg.bias_scale)
    tokens = TokenTable(
        m, cfg.num_classes, cfg.seed, cfg.token_scale, cfg.label_scale, labels=label_tokens(cfg, dataset.prototypes)
    )
    model = PromptModel(encoder, tokens, cfg.temperature, max_sequence_length(cfg.global_length, cfg.max_local_length))
    clients = [
        ClientState.create(c, shard, stream(cfg.seed, "init/local", c).normal(0.0, cfg.init_std, (s_l, m)), model)
        for c, (shard, s_l) in enumerate(zip(shards, local_lengths(cfg)))
    ]
    server = ServerState(stream(cfg.seed, "init/global").normal(0.0, cfg.init_std, (cfg.global_length, m)))
    return Experiment(cfg, dataset, shards, model, federation_settings(cfg), server, clients)


def run_training(cfg: ExperimentConfig, workers: int = 1, wire_log: list | None = None) -> ServerState:
    """Build and run the configured experiment; returns the server with its full history."""
    return build_experiment(cfg).run(workers=workers, wire_log=wire_log)

"""Round-synchronous federated training of a shared global prompt and private local prompts.

Only the global prompt ever leaves a client, and it does so as bytes in the
wire format below; the server decodes those bytes and nothing else.

Wire format (little endian)::

    u32 client_id | u32 round | u32 h_l | u32 rows | u32 cols | rows*cols float64
"""
from __future__ import annotations

import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Shard
from .encoder import encode_images
from .objectives import Batch, LossBreakdown, LossSettings, PromptModel, loss_and_gradients, predict
from .refinement import build_projector, refine
from .tensor import stream

HEADER = struct.Struct("<5I")


@dataclass(frozen=True)
class Upload:
    client_id: int
    round: int
    h: int
    prompt: np.ndarray


def encode_upload(client_id: int, round_idx: int, h: int, prompt: np.ndarray) -> bytes:
    rows, cols = prompt.shape
    body = np.ascontiguousarray(prompt, dtype="<f8").tobytes()
    return HEADER.pack(client_id, round_idx, h, rows, cols) + body


def decode_upload(payload: bytes) -> Upload:
    client_id, round_idx, h, rows, cols = HEADER.unpack_from(payload)
    expected = HEADER.size + 8 * rows * cols
    if len(payload) != expected:
        raise ValueError(f"payload is {len(payload)} bytes, header announces {expected}")
    prompt = np.frombuffer(payload, dtype="<f8", offset=HEADER.size).reshape(rows, cols).astype(np.float64)
    return Upload(client_id, round_idx, h, prompt)


@dataclass
class ClientState:
    id: int
    shard: Shard
    local_prompt: np.ndarray
    train_features: np.ndarray = field(repr=False)
    test_features: np.ndarray = field(repr=False)

    @property
    def h(self) -> int:
        return len(self.shard.train)

    @property
    def local_length(self) -> int:
        return self.local_prompt.shape[0]

    @classmethod
    def create(cls, client_id: int, shard: Shard, local_prompt: np.ndarray, model: PromptModel) -> "ClientState":
        return cls(
            client_id,
            shard,
            local_prompt,
            encode_images(shard.train.x, model.encoder),
            encode_images(shard.test.x, model.encoder) if len(shard.test) else np.zeros((0, model.dim)),
        )


@dataclass
class ServerState:
    global_prompt: np.ndarray
    round: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class FederationSettings:
    beta: float = 0.01
    lam: float = 0.6
    batch_size: int = 16
    local_epochs: int = 1
    local_steps: int = 0  # > 0 overrides local_epochs
    participation: float = 1.0
    master_seed: int = 0
    svd_method: str = "lapack"
    basis_seed: int = 0
    loss: LossSettings = LossSettings()

    def steps_for(self, h: int) -> int:
        if self.local_steps > 0:
            return self.local_steps
        return self.local_epochs * math.ceil(h / self.batch_size)


@dataclass
class RoundReport:
    round: int
    participating: list[int]
    losses: LossBreakdown
    client_losses: dict[int, LossBreakdown]
    accuracy: dict[int, float]
    global_grad_norm: float
    client_grad_norms: dict[int, float]
    refine_seconds: float
    round_seconds: float
    upload_bytes: dict[int, int]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.accuracy.values())))

    @property
    def refinement_time_fraction(self) -> float:
        return self.refine_seconds / self.round_seconds if self.round_seconds > 0 else 0.0


@dataclass
class LocalResult:
    global_prompt: np.ndarray
    local_prompt: np.ndarray
    losses: list[LossBreakdown]
    refine_seconds: float


def _refined(local_prompt, global_prompt, settings: FederationSettings, tag):
    """Projector and refined local prompt, or (None, None) with refinement off."""
    if not (settings.loss.use_local and settings.loss.use_refinement):
        return None, None
    proj = build_projector(global_prompt, settings.lam, tag, settings.svd_method, settings.basis_seed)
    return proj, refine(local_prompt, proj)


def local_update(
    client: ClientState,
    global_prompt: np.ndarray,
    steps: int,
    settings: FederationSettings,
    model: PromptModel,
    rng: np.random.Generator,
    round_idx: int = 0,
) -> LocalResult:
    """Run ``steps`` SGD steps on both prompts; the projector is rebuilt every step."""
    if steps < 0 or settings.beta < 0:
        raise ValueError("steps and beta must be non-negative")
    g_s = np.array(global_prompt, dtype=np.float64)
    g_c = np.array(client.local_prompt, dtype=np.float64)
    losses = []
    refine_time = 0.0
    for o in range(steps):
        t0 = time.perf_counter()
        proj, refined = _refined(g_c, g_s, settings, (round_idx, o))
        refine_time += time.perf_counter() - t0
        idx = rng.integers(0, client.h, size=settings.batch_size)
        batch = Batch(client.train_features[idx], client.shard.train.y[idx])
        loss, grad = loss_and_gradients(
            g_s, g_c, refined, batch, model, settings.loss, None if proj is None else proj.R
        )
        losses.append(loss)
        g_s -= settings.beta * grad.d_global
        g_c -= settings.beta * grad.d_local
    return LocalResult(g_s, g_c, losses, refine_time)


def aggregate(uploads: list[tuple[np.ndarray, int]]) -> np.ndarray:
    """Sample-size weighted average, summed in the given order."""
    if not uploads:
        raise ValueError("cannot aggregate an empty round")
    shape = uploads[0][0].shape
    if any(p.shape != shape for p, _ in uploads):
        raise ValueError("uploaded prompts differ in shape")
    if any(h <= 0 for _, h in uploads):
        raise ValueError("sample counts must be positive")
    total = sum(h for _, h in uploads)
    out = np.zeros(shape)
    for prompt, h in uploads:
        out += (h / total) * prompt
    return out


def aggregation_weights(sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    return sizes / sizes.sum()


def sample_participants(num_clients: int, fraction: float, master_seed: int, round_idx: int) -> list[int]:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("participation fraction must lie in (0, 1]")
    k = math.ceil(fraction * num_clients)
    if k >= num_clients:
        return list(range(num_clients))
    chosen = stream(master_seed, "participation", round_idx).choice(num_clients, size=k, replace=False)
    return sorted(int(c) for c in chosen)


def client_objective(client: ClientState, global_prompt, settings: FederationSettings, model: PromptModel, round_idx=0):
    """Loss and gradients of one client's objective on its full training split."""
    proj, refined = _refined(client.local_prompt, global_prompt, settings, (round_idx, -1))
    batch = Batch(client.train_features, client.shard.train.y)
    return loss_and_gradients(
        global_prompt, client.local_prompt, refined, batch, model, settings.loss, None if proj is None else proj.R
    )


def global_gradient(server: ServerState, clients: list[ClientState], settings, model):
    """Gradient of the sample-weighted global objective w.r.t. the global prompt.

    Only the global cross-entropy reaches G_s (R is held fixed even without
    detaching), so the local terms and the projector are skipped here.
    """
    weights = aggregation_weights([c.h for c in clients])
    total = np.zeros_like(server.global_prompt)
    per_client = {}
    global_only = replace(settings, loss=replace(settings.loss, use_local=False))
    for w, client in zip(weights, clients):
        _, grad = client_objective(client, server.global_prompt, global_only, model, server.round)
        per_client[client.id] = float(np.linalg.norm(grad.d_global))
        total += w * grad.d_global
    return total, per_client


def client_accuracy(client: ClientState, global_prompt, settings: FederationSettings, model: PromptModel) -> float:
    if len(client.shard.test) == 0:
        return float("nan")
    _, refined = _refined(client.local_prompt, global_prompt, settings, (-1, -1))
    pred = predict(model, global_prompt, client.local_prompt, refined, client.test_features, settings.loss.use_local)
    return float(np.mean(pred == client.shard.test.y))


def run_round(
    server: ServerState,
    clients: list[ClientState],
    settings: FederationSettings,
    model: PromptModel,
    workers: int = 1,
    wire_log: list | None = None,
) -> RoundReport:
    """One round: sample, local updates, upload global prompts as bytes, aggregate, evaluate."""
    t_start = time.perf_counter()
    z = server.round
    grad, client_grad_norms = global_gradient(server, clients, settings, model)
    participants = sample_participants(len(clients), settings.participation, settings.master_seed, z)
    by_id = {c.id: c for c in clients}
    broadcast = server.global_prompt.copy()

    def work(cid):
        client = by_id[cid]
        rng = stream(settings.master_seed, "local", cid, z)
        return local_update(client, broadcast, settings.steps_for(client.h), settings, model, rng, z)

    if workers > 1 and len(participants) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(zip(participants, pool.map(work, participants)))
    else:
        results = {cid: work(cid) for cid in participants}

    payloads = {cid: encode_upload(cid, z, by_id[cid].h, results[cid].global_prompt) for cid in participants}
    if wire_log is not None:
        wire_log.extend(payloads[cid] for cid in participants)
    decoded = [decode_upload(payloads[cid]) for cid in participants]
    server.global_prompt = aggregate([(u.prompt, u.h) for u in decoded])
    for cid in participants:
        by_id[cid].local_prompt = results[cid].local_prompt

    accuracy = {c.id: client_accuracy(c, server.global_prompt, settings, model) for c in clients}
    client_losses = {cid: LossBreakdown.mean(results[cid].losses) for cid in participants}
    report = RoundReport(
        round=z,
        participating=participants,
        losses=LossBreakdown.mean(list(client_losses.values())),
        client_losses=client_losses,
        accuracy=accuracy,
        global_grad_norm=float(np.linalg.norm(grad)),
        client_grad_norms=client_grad_norms,
        refine_seconds=sum(r.refine_seconds for r in results.values()),
        round_seconds=time.perf_counter() - t_start,
        upload_bytes={cid: len(payloads[cid]) for cid in participants},
    )
    server.history.append(report)
    server.round += 1
    return report

"""Frozen stand-in encoder and the cosine-softmax classifier.

Every encoder role (text sequences, prompt matrices, image vectors) uses the
same map ``x -> tanh(W @ mean_rows(x) + b)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .prompts import PromptAssembly
from .tensor import as_matrix, spectral_norm, stream

PROB_FLOOR = 1e-12


class DegenerateInputError(ValueError):
    """A feature vector has zero norm, so cosine similarity is undefined."""


@dataclass(frozen=True)
class FrozenEncoder:
    weight: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = as_matrix(self.weight, "weight").copy()
        b = np.asarray(self.bias, dtype=np.float64).copy()
        if w.shape[0] != w.shape[1] or b.shape != (w.shape[0],):
            raise ValueError(f"encoder needs square weight and matching bias, got {w.shape} and {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def from_seed(cls, dim: int, seed: int, weight_scale: float = 1.0, bias_scale: float = 0.1) -> "FrozenEncoder":
        rng = stream(seed, "encoder")
        w = rng.standard_normal((dim, dim)) * (weight_scale / np.sqrt(dim))
        b = rng.standard_normal(dim) * bias_scale
        return cls(w, b)

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    def apply_pooled(self, pooled: np.ndarray) -> np.ndarray:
        """tanh(W x + b) for a pooled vector or a stack of them (rows)."""
        return np.tanh(pooled @ self.weight.T + self.bias)

    def lipschitz(self, rows: int) -> float:
        """Lipschitz constant of encode_prompt on ``rows``-row inputs, Frobenius -> l2.

        Mean pooling maps ||A - B||_F to at most ||A - B||_F / sqrt(rows)
        (equality when all row differences agree), tanh is 1-Lipschitz.
        """
        return spectral_norm(self.weight) / np.sqrt(rows)


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")


def encode_sequence(seq: PromptAssembly, enc: FrozenEncoder) -> np.ndarray:
    pooled = seq.sequence[: seq.true_length].mean(axis=0)
    return enc.apply_pooled(pooled)


def encode_sequence_jacobian(seq: PromptAssembly, enc: FrozenEncoder, row: int) -> np.ndarray:
    """d(encode_sequence) / d(sequence[row]) as an m x m matrix."""
    if row >= seq.true_length:
        return np.zeros((enc.dim, enc.dim))
    t = encode_sequence(seq, enc)
    return (1.0 - t * t)[:, None] * enc.weight / seq.true_length


def encode_prompt(prompt, enc: FrozenEncoder) -> np.ndarray:
    p = np.asarray(prompt, dtype=np.float64)
    return enc.apply_pooled(p.mean(axis=0))


def encode_prompt_vjp(prompt, enc: FrozenEncoder, grad_out: np.ndarray, features=None) -> np.ndarray:
    """Pull a gradient on the encoder output back to the prompt rows.

    ``features`` may pass in ``encode_prompt(prompt, enc)`` when the caller
    already has it.
    """
    p = np.asarray(prompt, dtype=np.float64)
    t = encode_prompt(p, enc) if features is None else features
    row_grad = ((1.0 - t * t) * grad_out) @ enc.weight / p.shape[0]
    return np.broadcast_to(row_grad, p.shape).copy()


def encode_images(images, enc: FrozenEncoder) -> np.ndarray:
    """Image features for a stack of raw vectors (each a 1-row prompt)."""
    return enc.apply_pooled(np.atleast_2d(np.asarray(images, dtype=np.float64)))


def _unit_rows(x: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"{what} has a zero-norm feature vector")
    return x / norms, norms


def cosine_matrix(text_features, image_features) -> np.ndarray:
    """Cosine similarities, shape (num_images, num_classes)."""
    t_hat, _ = _unit_rows(np.atleast_2d(text_features), "text features")
    f_hat, _ = _unit_rows(np.atleast_2d(image_features), "image features")
    return f_hat @ t_hat.T


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_probabilities(text_features, image_feature, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    cos = cosine_matrix(text_features, image_feature)[0]
    return softmax(cos / temperature)


class _ClampCounter:
    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


ce_clamps = _ClampCounter()


def cross_entropy(probs, label: int) -> float:
    p = float(np.asarray(probs)[label])
    if p < PROB_FLOOR:
        ce_clamps.count += 1
        p = PROB_FLOOR
    return -float(np.log(p))

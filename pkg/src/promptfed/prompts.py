"""Token table and fixed-layout prompt sequences.

Sequence layout (one row per token, ``m`` columns)::

    start | global (S_s) | local (S_l) | refined local (S_l) | label(c) | suffix | end | zero padding

so ``true_length = 4 + S_s + 2 * S_l``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import as_matrix, stream

SPECIAL_TOKENS = 4  # start, label, suffix, end


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TokenTable:
    """Frozen special-token embeddings.

    ``start``, ``suffix`` and ``end`` are seeded Gaussian vectors with
    per-entry std ``token_scale``; ``labels`` holds one row per class. The
    pad token is exactly zero.
    """

    dim: int
    num_classes: int
    seed: int = 0
    token_scale: float = 1.0
    label_scale: float = 1.0
    labels: np.ndarray = field(default=None, repr=False)
    start: np.ndarray = field(init=False, repr=False)
    suffix: np.ndarray = field(init=False, repr=False)
    end: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim < 1 or self.num_classes < 1:
            raise ConfigurationError("token table needs dim >= 1 and num_classes >= 1")
        for role in ("start", "suffix", "end"):
            vec = stream(self.seed, f"token/{role}").standard_normal(self.dim) * self.token_scale
            vec.setflags(write=False)
            object.__setattr__(self, role, vec)
        if self.labels is None:
            labels = stream(self.seed, "token/label").standard_normal((self.num_classes, self.dim))
            labels *= self.label_scale
        else:
            labels = as_matrix(self.labels, "labels").copy()
            if labels.shape != (self.num_classes, self.dim):
                raise ConfigurationError(f"labels must be {(self.num_classes, self.dim)}, got {labels.shape}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def pad(self) -> np.ndarray:
        return np.zeros(self.dim)

    def label(self, class_id: int) -> np.ndarray:
        if not 0 <= class_id < self.num_classes:
            raise ConfigurationError(f"class id {class_id} out of range [0, {self.num_classes})")
        return self.labels[class_id]

    @property
    def fixed_sum(self) -> np.ndarray:
        """Sum of the class-independent special tokens (start + suffix + end)."""
        return self.start + self.suffix + self.end


@dataclass(frozen=True)
class PromptAssembly:
    sequence: np.ndarray  # K_max x m
    true_length: int
    class_id: int
    global_length: int
    local_length: int

    def block(self, name: str) -> np.ndarray:
        """Slice one named block back out of the sequence."""
        s_s, s_l = self.global_length, self.local_length
        starts = {
            "start": (0, 1),
            "global": (1, 1 + s_s),
            "local": (1 + s_s, 1 + s_s + s_l),
            "refined": (1 + s_s + s_l, 1 + s_s + 2 * s_l),
            "label": (1 + s_s + 2 * s_l, 2 + s_s + 2 * s_l),
            "suffix": (2 + s_s + 2 * s_l, 3 + s_s + 2 * s_l),
            "end": (3 + s_s + 2 * s_l, 4 + s_s + 2 * s_l),
            "padding": (self.true_length, self.sequence.shape[0]),
        }
        lo, hi = starts[name]
        return self.sequence[lo:hi]


def layout_length(global_length: int, local_length: int) -> int:
    return SPECIAL_TOKENS + global_length + 2 * local_length


def max_sequence_length(global_length: int, max_local_length: int) -> int:
    """K_max that fits the longest client layout."""
    if global_length < 1 or max_local_length < 1:
        raise ConfigurationError(
            f"prompt lengths must be positive (S_s={global_length}, S_l_max={max_local_length})"
        )
    return layout_length(global_length, max_local_length)


def assemble(
    global_prompt,
    local_prompt,
    refined_prompt,
    class_id: int,
    table: TokenTable,
    k_max: int,
    client_id: int | None = None,
) -> PromptAssembly:
    g = as_matrix(global_prompt, "global prompt")
    lp = as_matrix(local_prompt, "local prompt")
    rp = as_matrix(refined_prompt, "refined prompt")
    m = table.dim
    if g.shape[1] != m or lp.shape[1] != m or rp.shape[1] != m:
        raise ConfigurationError(
            f"prompt widths {g.shape[1]}, {lp.shape[1]}, {rp.shape[1]} do not match embedding dim {m}"
        )
    if lp.shape != rp.shape:
        raise ConfigurationError(f"refined prompt shape {rp.shape} differs from local prompt {lp.shape}")
    s_s, s_l = g.shape[0], lp.shape[0]
    n = layout_length(s_s, s_l)
    if n > k_max:
        who = f"client {client_id}" if client_id is not None else "client"
        raise ConfigurationError(f"{who} with local prompt length S_l={s_l} needs {n} rows but K_max={k_max}")
    seq = np.zeros((k_max, m))
    seq[0] = table.start
    seq[1 : 1 + s_s] = g
    seq[1 + s_s : 1 + s_s + s_l] = lp
    seq[1 + s_s + s_l : 1 + s_s + 2 * s_l] = rp
    seq[1 + s_s + 2 * s_l] = table.label(class_id)
    seq[2 + s_s + 2 * s_l] = table.suffix
    seq[3 + s_s + 2 * s_l] = table.end
    return PromptAssembly(seq, n, class_id, s_s, s_l)

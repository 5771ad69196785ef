"""Training objective for one client step and its analytic gradients.

The combined loss is

    ce(local assembly) + ce(global assembly) + stretch + separate

Gradient flow follows the detached convention: the refined prompt and the
global prompt inside the local assembly are constants, the separate term
only moves the local prompt, and the global cross-entropy only moves the
global prompt. ``LossSettings.detach_refined=False`` lets gradients pass
through ``refined = local @ R`` into the local prompt (R itself stays fixed).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import PROB_FLOOR, FrozenEncoder, encode_prompt, encode_prompt_vjp, _unit_rows, softmax
from .prompts import TokenTable, layout_length


@dataclass(frozen=True)
class PromptModel:
    """Frozen pieces shared by every client."""

    encoder: FrozenEncoder
    tokens: TokenTable
    temperature: float = 1.0
    k_max: int = 0

    @property
    def dim(self) -> int:
        return self.encoder.dim


@dataclass(frozen=True)
class LossSettings:
    gamma: float = 0.8
    use_local: bool = True
    use_refinement: bool = True
    use_stretch: bool = True
    use_separate: bool = True
    detach_refined: bool = True


@dataclass(frozen=True)
class Batch:
    """Encoded image features (rows) with integer labels."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class LossBreakdown:
    ce_local: float
    ce_global: float
    str: float
    sep: float

    @property
    def total(self) -> float:
        return self.ce_local + self.ce_global + self.str + self.sep

    @staticmethod
    def mean(items: list["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            nan = float("nan")
            return LossBreakdown(nan, nan, nan, nan)
        arr = np.array([[b.ce_local, b.ce_global, b.str, b.sep] for b in items])
        return LossBreakdown(*map(float, arr.mean(axis=0)))


@dataclass(frozen=True)
class GradientPair:
    d_global: np.ndarray
    d_local: np.ndarray


def stretch_loss(local_prompt, refined_prompt, enc: FrozenEncoder) -> float:
    diff = encode_prompt(local_prompt, enc) - encode_prompt(refined_prompt, enc)
    return float(diff @ diff)


def separate_loss(local_prompt, global_prompt, gamma: float, enc: FrozenEncoder) -> float:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    dist = float(np.linalg.norm(encode_prompt(local_prompt, enc) - encode_prompt(global_prompt, enc)))
    return max(0.0, gamma - dist)


def class_text_features(model: PromptModel, row_sum: np.ndarray, length: int) -> np.ndarray:
    """Text features for every class from the summed prompt rows of one assembly.

    Mean pooling only sees the sum of the rows, so the L assemblies differ
    only in their label token.
    """
    pooled = (model.tokens.fixed_sum + row_sum + model.tokens.labels) / length
    return model.encoder.apply_pooled(pooled)


def _ce_and_row_grad(model: PromptModel, row_sum: np.ndarray, length: int, batch: Batch, f_hat: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. any single prompt row.

    ``f_hat`` holds the batch's image features scaled to unit norm.
    """
    enc = model.encoder
    t = class_text_features(model, row_sum, length)
    t_hat, t_norm = _unit_rows(t, "text features")
    cos = f_hat @ t_hat.T
    probs = softmax(cos / model.temperature)
    n = len(batch)
    idx = np.arange(n)
    ce = float(-np.mean(np.log(np.maximum(probs[idx, batch.labels], PROB_FLOOR))))
    d_logits = probs.copy()
    d_logits[idx, batch.labels] -= 1.0
    d_cos = d_logits / (n * model.temperature)
    d_t = (d_cos.T @ f_hat - (d_cos * cos).sum(axis=0)[:, None] * t_hat) / t_norm
    d_z = d_t * (1.0 - t * t)
    d_row = (d_z @ enc.weight).sum(axis=0) / length
    return ce, d_row


def _row_sums(model: PromptModel, global_prompt, local_prompt, refined_prompt):
    zero = np.zeros(model.dim)
    g_sum = global_prompt.sum(axis=0)
    l_sum = local_prompt.sum(axis=0) if local_prompt is not None else zero
    r_sum = refined_prompt.sum(axis=0) if refined_prompt is not None else zero
    return g_sum, l_sum, r_sum


TERMS = ("ce_local", "ce_global", "str", "sep")


def term_gradients(
    global_prompt: np.ndarray,
    local_prompt: np.ndarray,
    refined_prompt: np.ndarray | None,
    batch: Batch,
    model: PromptModel,
    settings: LossSettings,
    projector: np.ndarray | None = None,
) -> tuple[LossBreakdown, dict[str, GradientPair]]:
    """Loss breakdown and the gradient contributed by each term separately.

    ``refined_prompt`` is None when refinement is off; its block in the
    sequence is then zero and the stretch term vanishes. ``projector`` (R) is
    only read when ``settings.detach_refined`` is False.
    """
    enc = model.encoder
    length = layout_length(global_prompt.shape[0], local_prompt.shape[0])
    g_sum, l_sum, r_sum = _row_sums(model, global_prompt, local_prompt, refined_prompt)
    zero_g = np.zeros_like(global_prompt)

    def local_only(d_local):
        return GradientPair(zero_g, d_local)

    f_hat, _ = _unit_rows(batch.features, "image features")
    ce_global, d_row_g = _ce_and_row_grad(model, g_sum, length, batch, f_hat)
    grads = {"ce_global": GradientPair(np.broadcast_to(d_row_g, global_prompt.shape).copy(), np.zeros_like(local_prompt))}
    ce_local = str_loss = sep_loss = 0.0
    through_r = not settings.detach_refined and refined_prompt is not None
    if through_r and projector is None:
        raise ValueError("gradients through the refinement need the projector R")

    if settings.use_local:
        ce_local, d_row_l = _ce_and_row_grad(model, g_sum + l_sum + r_sum, length, batch, f_hat)
        if through_r:
            d_row_l = d_row_l + d_row_l @ projector.T
        grads["ce_local"] = local_only(np.broadcast_to(d_row_l, local_prompt.shape).copy())

        d_c = encode_prompt(local_prompt, enc)
        if settings.use_stretch and refined_prompt is not None:
            d_r = encode_prompt(refined_prompt, enc)
            diff = d_c - d_r
            str_loss = float(diff @ diff)
            d = encode_prompt_vjp(local_prompt, enc, 2.0 * diff, d_c)
            if through_r:
                d = d - encode_prompt_vjp(refined_prompt, enc, 2.0 * diff, d_r) @ projector.T
            grads["str"] = local_only(d)

        if settings.use_separate:
            delta = d_c - encode_prompt(global_prompt, enc)
            dist = float(np.linalg.norm(delta))
            sep_loss = max(0.0, settings.gamma - dist)
            # the boundary dist == gamma takes the zero subgradient
            if sep_loss > 0.0 and dist > 0.0:
                grads["sep"] = local_only(encode_prompt_vjp(local_prompt, enc, -delta / dist, d_c))

    for name in TERMS:
        grads.setdefault(name, local_only(np.zeros_like(local_prompt)))
    return LossBreakdown(ce_local, ce_global, str_loss, sep_loss), grads


def loss_and_gradients(
    global_prompt: np.ndarray,
    local_prompt: np.ndarray,
    refined_prompt: np.ndarray | None,
    batch: Batch,
    model: PromptModel,
    settings: LossSettings,
    projector: np.ndarray | None = None,
) -> tuple[LossBreakdown, GradientPair]:
    """Loss breakdown and summed gradients for one mini-batch."""
    losses, grads = term_gradients(global_prompt, local_prompt, refined_prompt, batch, model, settings, projector)
    d_global = grads["ce_global"].d_global.copy()
    d_local = grads["ce_local"].d_local + grads["str"].d_local + grads["sep"].d_local
    return losses, GradientPair(d_global, d_local)


def total_loss(global_prompt, local_prompt, refined_prompt, batch, model, settings, projector=None) -> LossBreakdown:
    return loss_and_gradients(global_prompt, local_prompt, refined_prompt, batch, model, settings, projector)[0]


def gradients(global_prompt, local_prompt, refined_prompt, batch, model, settings, projector=None) -> GradientPair:
    return loss_and_gradients(global_prompt, local_prompt, refined_prompt, batch, model, settings, projector)[1]


def predict(model: PromptModel, global_prompt, local_prompt, refined_prompt, features, use_local: bool = True):
    """Argmax class per image from the local-prompt assembly (or the global one)."""
    s_l = local_prompt.shape[0]
    length = layout_length(global_prompt.shape[0], s_l)
    g_sum, l_sum, r_sum = _row_sums(model, global_prompt, local_prompt, refined_prompt)
    row_sum = g_sum + l_sum + r_sum if use_local else g_sum
    t = class_text_features(model, row_sum, length)
    t_hat, _ = _unit_rows(t, "text features")
    f_hat, _ = _unit_rows(np.atleast_2d(features), "image features")
    return np.argmax(f_hat @ t_hat.T, axis=1)


def finite_difference(fn, x: np.ndarray, entries, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn`` at the given flat indices of ``x``."""
    out = np.empty(len(entries))
    flat = x.reshape(-1)
    for k, i in enumerate(entries):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        out[k] = (up - down) / (2.0 * h)
    return out

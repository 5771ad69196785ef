"""Symbolic trace of one training step, built with sympy.

The loss is written out from the sequence layout row by row and
differentiated symbolically, so it shares no gradient code with the package.
Detached quantities (the refined prompt, the global prompt inside the local
assembly and inside the hinge) enter as numeric constants.
"""
from __future__ import annotations

import numpy as np
import sympy as sp


def _tanh_layer(w, b, pooled):
    m = len(b)
    return [sp.tanh(sum(sp.Float(w[i, j], 30) * pooled[j] for j in range(m)) + sp.Float(b[i], 30)) for i in range(m)]


def _const_rows(a):
    return [[sp.Float(v, 30) for v in row] for row in np.asarray(a)]


def _pool(rows):
    n = len(rows)
    m = len(rows[0])
    return [sum(r[j] for r in rows) / n for j in range(m)]


def _sequence(start, g_rows, l_rows, r_rows, label, suffix, end):
    return [start, *g_rows, *l_rows, *r_rows, label, suffix, end]


def _ce(text_feats, image_feat, label, mu):
    def norm(v):
        return sp.sqrt(sum(x * x for x in v))

    f_n = norm(image_feat)
    logits = [sum(a * b for a, b in zip(t, image_feat)) / (norm(t) * f_n) / mu for t in text_feats]
    return -logits[label] + sp.log(sum(sp.exp(z) for z in logits))


def symbolic_step(g_s, g_c, refined, image_feature, label, enc, tokens, mu, gamma, beta, use_local=True):
    """New (G_s, G_c) after one plain gradient step on a one-example batch, plus the loss terms."""
    s_s, m = g_s.shape
    s_l = g_c.shape[0]
    gs = sp.Matrix(s_s, m, lambda i, j: sp.Symbol(f"gs_{i}_{j}"))
    gc = sp.Matrix(s_l, m, lambda i, j: sp.Symbol(f"gc_{i}_{j}"))
    subs = {gs[i, j]: sp.Float(g_s[i, j], 30) for i in range(s_s) for j in range(m)}
    subs.update({gc[i, j]: sp.Float(g_c[i, j], 30) for i in range(s_l) for j in range(m)})
    w, b = enc.weight, enc.bias
    start, suffix, end = (_const_rows([v])[0] for v in (tokens.start, tokens.suffix, tokens.end))
    labels = _const_rows(tokens.labels)
    zeros = [[sp.Integer(0)] * m for _ in range(s_l)]
    gs_rows = [list(gs.row(i)) for i in range(s_s)]
    gc_rows = [list(gc.row(i)) for i in range(s_l)]
    gs_const = _const_rows(g_s)
    ref_const = _const_rows(refined) if refined is not None else zeros
    img = [sp.Float(v, 30) for v in image_feature]

    glob = [_tanh_layer(w, b, _pool(_sequence(start, gs_rows, zeros, zeros, labels[c], suffix, end))) for c in range(len(labels))]
    ce_global = _ce(glob, img, label, mu)
    ce_local = sp.Integer(0)
    stretch = sp.Integer(0)
    sep = sp.Integer(0)
    if use_local:
        loc = [
            _tanh_layer(w, b, _pool(_sequence(start, gs_const, gc_rows, ref_const, labels[c], suffix, end)))
            for c in range(len(labels))
        ]
        ce_local = _ce(loc, img, label, mu)
        d_c = _tanh_layer(w, b, _pool(gc_rows))
        if refined is not None:
            d_r = _tanh_layer(w, b, _pool(ref_const))
            stretch = sum((x - y) ** 2 for x, y in zip(d_c, d_r))
        d_s = _tanh_layer(w, b, _pool(gs_const))
        dist = sp.sqrt(sum((x - y) ** 2 for x, y in zip(d_c, d_s)))
        if float(dist.subs(subs)) < gamma:
            sep = gamma - dist
    total_local = ce_local + stretch + sep

    new_gs = np.array(
        [[float((gs[i, j] - beta * sp.diff(ce_global, gs[i, j])).subs(subs)) for j in range(m)] for i in range(s_s)]
    )
    new_gc = np.array(
        [[float((gc[i, j] - beta * sp.diff(total_local, gc[i, j])).subs(subs)) for j in range(m)] for i in range(s_l)]
    )
    values = {k: float(v.subs(subs)) for k, v in dict(ce_local=ce_local, ce_global=ce_global, str=stretch, sep=sep).items()}
    return new_gs, new_gc, values


def hand_projector(g_row, m):
    """R for a single-row global prompt with r = 1: remove the prompt's own direction."""
    g = np.asarray(g_row, dtype=np.float64).reshape(m)
    u = g / np.linalg.norm(g)
    return np.eye(m) - np.outer(u, u)

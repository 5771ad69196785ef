from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptfed.prompts import (
    ConfigurationError,
    TokenTable,
    assemble,
    layout_length,
    max_sequence_length,
)
from promptfed.tensor import stream


def _prompts(s_s, s_l, m, seed=0):
    rng = stream(seed, "test/prompts")
    return rng.standard_normal((s_s, m)), rng.standard_normal((s_l, m)), rng.standard_normal((s_l, m))


def test_layout_example_pads_the_tail():
    table = TokenTable(6, 3, seed=1)
    g, l, r = _prompts(2, 1, 6)
    seq = assemble(g, l, r, 2, table, k_max=10)
    assert seq.true_length == 8
    assert np.all(seq.sequence[8:] == 0.0)
    assert np.all(seq.sequence[:8].any(axis=1))


def test_blocks_round_trip_in_documented_order():
    table = TokenTable(5, 4, seed=2)
    g, l, r = _prompts(3, 2, 5)
    seq = assemble(g, l, r, 1, table, k_max=20)
    assert np.array_equal(seq.block("start")[0], table.start)
    assert np.array_equal(seq.block("global"), g)
    assert np.array_equal(seq.block("local"), l)
    assert np.array_equal(seq.block("refined"), r)
    assert np.array_equal(seq.block("label")[0], table.label(1))
    assert np.array_equal(seq.block("suffix")[0], table.suffix)
    assert np.array_equal(seq.block("end")[0], table.end)
    assert seq.block("padding").shape == (20 - seq.true_length, 5)


def test_zero_prompts_leave_special_rows_nonzero():
    table = TokenTable(4, 2, seed=3)
    z2, z1 = np.zeros((2, 4)), np.zeros((1, 4))
    seq = assemble(z2, z1, z1, 0, table, k_max=8)
    for name in ("global", "local", "refined"):
        assert not seq.block(name).any()
    for name in ("start", "label", "suffix", "end"):
        assert seq.block(name).any()


def test_full_scale_lengths_all_fit():
    m, s_s = 512, 8
    k_max = max_sequence_length(s_s, 64)
    table = TokenTable(m, 2, seed=0)
    g = np.ones((s_s, m))
    for s_l in range(4, 65):
        loc = np.ones((s_l, m))
        seq = assemble(g, loc, loc, 1, table, k_max)
        assert seq.true_length == layout_length(s_s, s_l) <= k_max


def test_max_sequence_length_examples():
    assert max_sequence_length(8, 64) == 140
    assert max_sequence_length(8, 4) == 20
    with pytest.raises(ConfigurationError):
        max_sequence_length(8, 0)


def test_overflow_names_client_and_length():
    table = TokenTable(4, 2)
    g, l, r = _prompts(8, 9, 4)
    with pytest.raises(ConfigurationError, match=r"client 7 .*S_l=9"):
        assemble(g, l, r, 0, table, k_max=max_sequence_length(8, 8), client_id=7)


def test_width_and_shape_mismatch_rejected():
    table = TokenTable(4, 2)
    g, l, r = _prompts(2, 2, 4)
    with pytest.raises(ConfigurationError):
        assemble(g[:, :3], l, r, 0, table, 20)
    with pytest.raises(ConfigurationError):
        assemble(g, l, r[:1], 0, table, 20)
    with pytest.raises(ConfigurationError):
        table.label(5)


def test_token_table_is_deterministic_and_frozen():
    a, b = TokenTable(8, 3, seed=4), TokenTable(8, 3, seed=4)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.start, b.start)
    assert not np.array_equal(a.start, TokenTable(8, 3, seed=5).start)
    assert np.all(a.pad == 0.0)
    with pytest.raises(ValueError):
        a.labels[0, 0] = 1.0


def test_explicit_labels_are_validated():
    with pytest.raises(ConfigurationError):
        TokenTable(4, 3, labels=np.ones((2, 4)))
    t = TokenTable(4, 3, labels=np.arange(12.0).reshape(3, 4))
    assert np.array_equal(t.label(2), [8.0, 9.0, 10.0, 11.0])


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2), st.integers(0, 10_000))
def test_assemble_is_injective(s_s, s_l, cls, seed):
    table = TokenTable(3, 3, seed=9)
    g, l, r = _prompts(s_s, s_l, 3, seed)
    k = max_sequence_length(s_s, s_l) + 2
    base = assemble(g, l, r, cls, table, k).sequence
    for which in range(3):
        parts = [g.copy(), l.copy(), r.copy()]
        parts[which][0, 0] += 1.0
        assert not np.array_equal(base, assemble(*parts, cls, table, k).sequence)
    assert not np.array_equal(base, assemble(g, l, r, (cls + 1) % 3, table, k).sequence)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tcct import tensor as T
from tcct.attention import (AttentionSpec, ConfigurationError, CSPAttention, MultiHeadAttention,
                            build_attention, logsparse_mask, n_top_queries, probsparse_attention,
                            probsparse_measure, sample_keys, scaled_dot_attention, select_prefix_top,
                            select_top)
from tcct.complexity import memory_accounting
from tcct.tensor import Tensor


def naive_attention(q, k, v, mask=None):
    """Two-loop softmax attention on (L, d) arrays."""
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        s = [q[i] @ k[j] / math.sqrt(q.shape[1]) if mask is None or mask[i, j] else -np.inf
             for j in range(k.shape[0])]
        m = max(s)
        w = [math.exp(x - m) for x in s]
        z = sum(w)
        for j in range(k.shape[0]):
            out[i] += w[j] / z * v[j]
    return out


def naive_mha(x, wq, wk, wv, wo, H, mask=None):
    d = x.shape[1]
    dh = d // H
    q, k, v = x @ wq, x @ wk, x @ wv
    heads = [naive_attention(q[:, h * dh:(h + 1) * dh], k[:, h * dh:(h + 1) * dh],
                             v[:, h * dh:(h + 1) * dh], mask) for h in range(H)]
    return np.concatenate(heads, axis=1) @ wo


# ---------------------------------------------------------------------------
# scaled dot attention


def test_single_key_returns_value_row(rng):
    q = Tensor(rng.standard_normal((5, 4)))
    k, v = Tensor(rng.standard_normal((1, 4))), Tensor(rng.standard_normal((1, 3)))
    assert np.allclose(scaled_dot_attention(q, k, v).data, np.repeat(v.data, 5, axis=0), atol=1e-15)


def test_equal_scores_average_values(rng):
    q = Tensor(np.zeros((3, 4)))
    v = rng.standard_normal((6, 2))
    out = scaled_dot_attention(q, Tensor(rng.standard_normal((6, 4))), Tensor(v)).data
    assert np.allclose(out, v.mean(0), atol=1e-14)


def test_scaled_dot_matches_loop_oracle(rng):
    q, k, v = rng.standard_normal((3, 4)), rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    assert np.abs(scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data - naive_attention(q, k, v)).max() < 1e-12
    with pytest.raises(T.DimensionError):
        scaled_dot_attention(Tensor(q), Tensor(k[:, :3]), Tensor(v))


# ---------------------------------------------------------------------------
# probsparse


def test_measure_symmetry_and_orthogonal_query(rng):
    q = np.tile(rng.standard_normal(4), (5, 1))
    s = probsparse_measure(q, rng.standard_normal((3, 4)))
    assert np.all(s == s[0])
    k = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    assert probsparse_measure(np.array([[0, 0, 1.0, 0]]), k)[0] == 0.0
    with pytest.raises(T.DimensionError):
        probsparse_measure(q, np.zeros((0, 4)))


def test_measure_matches_exhaustive_oracle():
    q = np.array([[3.0, 0, 0, 1], [0, 2, 0, 0], [1, 1, 1, 1], [0, 0, -2, 0]])
    k = np.array([[1.0, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [1, 1, 0, 0]])
    oracle = []
    for i in range(4):
        s = [sum(q[i, t] * k[j, t] for t in range(4)) / 2.0 for j in range(4)]
        oracle.append(max(s) - sum(s) / 4)
    got = probsparse_measure(q, k)
    assert np.allclose(got, oracle, atol=1e-15)
    assert list(np.argsort(-got, kind="stable")) == sorted(range(4), key=lambda i: (-oracle[i], i))


def test_select_top_breaks_ties_low_index():
    assert select_top(np.array([1.0, 2.0, 2.0, 0.5]), 1).tolist() == [False, True, False, False]


def test_prefix_selection_is_causal(rng):
    s = rng.standard_normal(12)
    full = select_prefix_top(s, 3)
    for t in range(12):
        s2 = s.copy()
        s2[t + 1 :] = rng.standard_normal(11 - t)
        assert np.array_equal(select_prefix_top(s2, 3)[: t + 1], full[: t + 1])
    assert full[:3].all()


@pytest.mark.parametrize("masked", [False, True])
def test_probsparse_full_selection_equals_canonical(masked, rng):
    for _ in range(5):
        Q, K, V = (Tensor(rng.standard_normal((2, 3, 10, 4))) for _ in range(3))
        mask = np.tril(np.ones((10, 10), bool)) if masked else None
        diff = probsparse_attention(Q, K, V, c=50.0, masked=masked).data - scaled_dot_attention(Q, K, V, mask).data
        assert np.abs(diff).max() <= 1e-10


def test_single_query_always_selected(rng):
    Q = Tensor(rng.standard_normal((1, 4)))
    K, V = Tensor(rng.standard_normal((6, 4))), Tensor(rng.standard_normal((6, 4)))
    assert np.allclose(probsparse_attention(Q, K, V, c=1.0).data, scaled_dot_attention(Q, K, V).data, atol=1e-14)


def test_probsparse_selection_matches_brute_force(rng):
    q, k, v = rng.standard_normal((8, 4)), rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
    u = n_top_queries(8, 1.0)
    assert u == 3
    idx = sample_keys(8, 1.0, np.random.default_rng(7))
    scores = [max(q[i] @ k[j] / 2 for j in idx) - sum(q[i] @ k[j] / 2 for j in idx) / len(idx) for i in range(8)]
    chosen = sorted(sorted(range(8), key=lambda i: (-scores[i], i))[:u])
    out = probsparse_attention(Tensor(q), Tensor(k), Tensor(v), c=1.0, rng=np.random.default_rng(7)).data
    full = naive_attention(q, k, v)
    for i in range(8):
        expect = full[i] if i in chosen else v.mean(0)
        assert np.abs(out[i] - expect).max() < 1e-12


def test_sampling_is_seeded():
    a = sample_keys(96, 5.0, np.random.default_rng(3))
    assert np.array_equal(a, sample_keys(96, 5.0, np.random.default_rng(3)))
    assert len(a) == math.ceil(5 * math.log(96)) and len(set(a)) == len(a)


# ---------------------------------------------------------------------------
# logsparse


def test_logsparse_mask():
    m = logsparse_mask(8)
    assert np.flatnonzero(m[0]).tolist() == [0]
    assert set(np.flatnonzero(m[5])) == {5, 4, 3, 1}
    assert not np.triu(m, 1).any()


# ---------------------------------------------------------------------------
# multi-head attention


def _weights(m: MultiHeadAttention):
    return m.wq.weight.data, m.wk.weight.data, m.wv.weight.data, m.wo.weight.data


def test_single_head_is_projected_attention(rng):
    m = MultiHeadAttention(6, 1, rng)
    x = rng.standard_normal((5, 6))
    wq, wk, wv, wo = _weights(m)
    ref = scaled_dot_attention(Tensor(x @ wq), Tensor(x @ wk), Tensor(x @ wv)).data @ wo
    assert np.abs(m(Tensor(x[None])).data[0] - ref).max() < 1e-12


def test_zero_input_zero_output(rng):
    for spec in (AttentionSpec(heads=2, model_dim=8), AttentionSpec(csp=True, heads=2, model_dim=8)):
        assert np.all(build_attention(spec, rng)(Tensor(np.zeros((1, 5, 8)))).data == 0)


@pytest.mark.parametrize("masked", [False, True])
def test_mha_matches_naive_oracle(masked):
    worst = 0.0
    for seed in range(50):
        r = np.random.default_rng(seed)
        m = MultiHeadAttention(8, 2, r, masked=masked)
        x = r.standard_normal((4, 8))
        mask = np.tril(np.ones((4, 4), bool)) if masked else None
        worst = max(worst, np.abs(m(Tensor(x[None])).data[0] - naive_mha(x, *_weights(m), 2, mask)).max())
    assert worst < 1e-12


# ---------------------------------------------------------------------------
# CSP


def test_csp_shapes_and_split():
    spec = AttentionSpec(csp=True, heads=2, model_dim=8)
    assert (spec.conv_dim, spec.attn_dim, spec.head_dim) == (4, 4, 2)
    block = CSPAttention(spec, np.random.default_rng(0))
    assert block(Tensor(np.ones((2, 5, 8)))).shape == (2, 5, 8)
    with pytest.raises(ConfigurationError):
        AttentionSpec(csp=True, heads=4, model_dim=12)


def test_csp_first_part_ignores_second(rng):
    block = CSPAttention(AttentionSpec(csp=True, heads=2, model_dim=8), rng)
    x = rng.standard_normal((1, 6, 8))
    y = block(Tensor(x)).data
    x2 = x.copy()
    x2[..., 4:] = rng.standard_normal((1, 6, 4))
    y2 = block(Tensor(x2)).data
    assert np.array_equal(y[..., :4], y2[..., :4])
    assert np.array_equal(y[..., :4], x[..., :4] @ block.w_c.weight.data)


@given(st.integers(0, 2**31 - 1))
def test_csp_gradient_separation(seed):
    r = np.random.default_rng(seed)
    block = CSPAttention(AttentionSpec(csp=True, heads=2, model_dim=8), np.random.default_rng(0))
    x1 = r.standard_normal((1, 5, 4))
    upstream = r.standard_normal((1, 5, 8))
    grads = []
    for _ in range(2):
        x = Tensor(np.concatenate([x1, r.standard_normal((1, 5, 4))], axis=-1))
        T.backward(T.sum_all(T.mul(block(x), upstream)))
        grads.append(block.w_c.weight.grad.copy())
        block.zero_grad()
    assert np.array_equal(grads[0], grads[1])


def test_csp_single_gradient_route(rng):
    block = CSPAttention(AttentionSpec(csp=True, heads=2, model_dim=8), rng)
    x = Tensor(rng.standard_normal((1, 5, 8)), requires_grad=True)
    out = block(x)
    tape = T.build_tape(T.sum_all(out))
    y1, y2 = tape.entry_for(out).node.parents
    a1, a2 = tape.ancestors(y1), tape.ancestors(y2)
    assert block.w_c.weight.id in a1 and block.w_c.weight.id not in a2
    attn_ids = {p.id for p in block.attn.parameters().values()}
    assert attn_ids <= a2 and not attn_ids & a1


@pytest.mark.parametrize("d", [2, 8, 16, 64, 128])
def test_parameter_counts(d):
    can = build_attention(AttentionSpec(heads=1, model_dim=d), np.random.default_rng(0))
    csp = build_attention(AttentionSpec(csp=True, heads=1, model_dim=d), np.random.default_rng(0))
    assert can.param_count() == 4 * d * d == memory_accounting(AttentionSpec(heads=1, model_dim=d))
    assert csp.param_count() == 5 * (d // 2) ** 2 == memory_accounting(AttentionSpec(csp=True, heads=1, model_dim=d))
    assert csp.param_count() * 10000 == can.param_count() * 3125


@pytest.mark.parametrize("inner", ["canonical", "probsparse", "logsparse"])
@pytest.mark.parametrize("csp", [False, True])
def test_masked_blocks_are_causal(inner, csp):
    r = np.random.default_rng(5)
    block = build_attention(AttentionSpec(inner, csp, True, 2, 8, sampling_factor=1.0), r, seed=3)
    x = r.standard_normal((2, 16, 8))
    y = block(Tensor(x)).data
    for t in range(16):
        z = x.copy()
        z[:, t + 1 :] += r.standard_normal(z[:, t + 1 :].shape)
        assert np.array_equal(block(Tensor(z)).data[:, : t + 1], y[:, : t + 1])


@pytest.mark.parametrize("inner", ["canonical", "probsparse", "logsparse"])
@pytest.mark.parametrize("csp", [False, True])
def test_block_gradients(inner, csp):
    r = np.random.default_rng(2)
    block = build_attention(AttentionSpec(inner, csp, inner != "canonical", 2, 8, sampling_factor=1.0), r)
    x = Tensor(r.standard_normal((2, 6, 8)), requires_grad=True)
    target = r.standard_normal((2, 6, 8))
    rep = T.finite_diff_check(lambda: T.mse_loss(block(x), target), {"x": x, **block.parameters()})
    assert rep.max_rel_error < 1e-4, rep.errors

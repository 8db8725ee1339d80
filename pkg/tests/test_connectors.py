import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tcct import tensor as T
from tcct.attention import ConfigurationError
from tcct.connectors import (ConnectorConfig, DistillStage, FeaturePyramid, PyramidError, Transition,
                             conv_only_span, distill_stage, impulse_trace_span, passthrough_fuse,
                             receptive_span, stage_geometries)
from tcct.tensor import Tensor

DILATED = ConnectorConfig(mode="dilated_causal")
CANONICAL = ConnectorConfig(mode="canonical_conv")


def test_dilation_schedules():
    assert [DILATED.dilation(i) for i in (1, 2, 3, 4)] == [1, 2, 4, 8]
    assert [ConnectorConfig(dilation_schedule="linear").dilation(i) for i in (1, 2, 3)] == [1, 2, 3]
    assert ConnectorConfig(dilation_schedule=(1, 3)).dilation(2) == 3
    assert CANONICAL.dilation(3) == 1
    with pytest.raises(ConfigurationError):
        ConnectorConfig(mode="bogus")


def test_distill_halves_length(rng):
    stage = DistillStage(4, 1, DILATED, rng)
    assert stage(Tensor(rng.standard_normal((2, 96, 4)))).shape == (2, 48, 4)
    with pytest.raises(ConfigurationError):
        stage(Tensor(np.zeros((1, 7, 4))))


def test_constant_input_all_ones_kernel():
    w = Tensor(np.ones((3, 1, 1)))
    y = distill_stage(Tensor(np.full((1, 16, 1), 2.0)), w, 2, DILATED).data
    assert y.shape == (1, 8, 1)
    # elu(k*c) = k*c for positive c; the pool reaches past the warm-up taps
    assert np.all(y[0, 2:, 0] == 6.0)


@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_stack_causality_and_windows(n, seed):
    """An impulse at p moves only outputs whose receptive window contains p."""
    r = np.random.default_rng(seed)
    L = 64
    stages = [DistillStage(2, i + 1, DILATED, r) for i in range(n)]
    span = receptive_span(stage_geometries(DILATED, n))

    def run(x):
        h = Tensor(x)
        for s in stages:
            h = s(h)
        return h.data

    x = r.standard_normal((1, L, 2))
    y = run(x)
    for p in r.choice(L, size=8, replace=False):
        z = x.copy()
        z[0, p] += 5.0
        changed = np.flatnonzero(np.any(run(z)[0] != y[0], axis=-1))
        for m in changed:
            last = 2**n * (m + 1) - 1
            assert last - span + 1 <= p <= last


def test_receptive_spans_hand_values():
    assert receptive_span([]) == 1
    assert receptive_span(stage_geometries(DILATED, 2)) == 17
    assert receptive_span(stage_geometries(CANONICAL, 2)) == 13
    assert receptive_span(stage_geometries(DILATED, 1)) == receptive_span(stage_geometries(CANONICAL, 1)) == 5
    assert [receptive_span(stage_geometries(DILATED, n)) for n in (3, 4)] == [57, 201]
    assert [receptive_span(stage_geometries(CANONICAL, n)) for n in (3, 4)] == [29, 61]


@pytest.mark.parametrize("n", range(5))
def test_receptive_span_matches_impulse_oracle(n):
    for cfg in (DILATED, CANONICAL):
        geo = stage_geometries(cfg, n)
        assert receptive_span(geo) == impulse_trace_span(geo)
    d = receptive_span(stage_geometries(DILATED, n))
    c = receptive_span(stage_geometries(CANONICAL, n))
    assert d >= c and (d > c or n < 2)


def test_conv_only_span():
    assert [conv_only_span(stage_geometries(DILATED, n)) for n in (1, 2, 3)] == [3, 7, 15]
    assert [conv_only_span(stage_geometries(CANONICAL, n)) for n in (1, 2, 3)] == [3, 5, 7]


# ---------------------------------------------------------------------------
# passthrough


def _maps(n, L, d, rng):
    return [Tensor(rng.standard_normal((1, L // 2**i, d))) for i in range(n)]


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_passthrough_dims(n, rng):
    out = passthrough_fuse(_maps(n, 64, 4, rng))
    assert out.shape == (1, 64 // 2 ** (n - 1), (2**n - 1) * 4)


def test_passthrough_reference_shape_and_identity(rng):
    assert passthrough_fuse(_maps(3, 96, 16, rng)).shape == (1, 24, 112)
    m = _maps(1, 10, 3, rng)
    assert np.array_equal(passthrough_fuse(m).data, m[0].data)


def test_passthrough_chunk_order():
    a = Tensor(np.arange(32.0).reshape(1, 8, 4))
    b = Tensor(100 + np.arange(16.0).reshape(1, 4, 4))
    out = passthrough_fuse([a, b]).data[0]
    assert out.shape == (4, 12)
    assert np.array_equal(out[:, :4], a.data[0, :4])
    assert np.array_equal(out[:, 4:8], a.data[0, 4:])
    assert np.array_equal(out[:, 8:], b.data[0])


def test_pyramid_errors(rng):
    with pytest.raises(PyramidError):
        FeaturePyramid([Tensor(np.zeros((1, 8, 2))), Tensor(np.zeros((1, 3, 2)))])
    with pytest.raises(PyramidError):
        FeaturePyramid([])


def test_transition(rng):
    t = Transition(112, 16, rng)
    assert t(Tensor(rng.standard_normal((1, 24, 112)))).shape == (1, 24, 16)
    ident = Transition(4, 4, rng)
    ident.proj.weight.data[:] = np.eye(4)
    x = rng.standard_normal((1, 5, 4))
    assert np.array_equal(ident(Tensor(x)).data, x)
    ident.proj.weight.data[:] = 0
    assert np.all(ident(Tensor(x)).data == 0)
    with pytest.raises(T.DimensionError):
        t(Tensor(np.zeros((1, 24, 16))))


def test_connector_gradients(rng):
    for cfg in (DILATED, CANONICAL):
        stage = DistillStage(3, 2, cfg, rng)
        x = Tensor(rng.standard_normal((2, 8, 3)), requires_grad=True)
        rep = T.finite_diff_check(lambda: T.sum_all(T.square(stage(x))), {"x": x, **stage.parameters()})
        assert rep.passed, rep.errors

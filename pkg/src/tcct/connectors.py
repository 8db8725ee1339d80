"""Distilling stages between attention blocks and passthrough pyramid fusion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import ConfigurationError
from .layers import Linear, Module, init_weight
from .tensor import DimensionError, Tensor

MODES = ("dilated_causal", "canonical_conv")


class PyramidError(DimensionError):
    pass


@dataclass(frozen=True)
class ConnectorConfig:
    kernel: int = 3
    mode: str = "dilated_causal"
    dilation_schedule: str | tuple[int, ...] = "exponential"
    pool_kernel: int = 3
    pool_stride: int = 2
    bias: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown connector mode {self.mode!r}")
        if self.kernel < 1:
            raise ConfigurationError("kernel must be >= 1")
        if isinstance(self.dilation_schedule, str):
            if self.dilation_schedule not in ("exponential", "linear"):
                raise ConfigurationError(f"unknown dilation schedule {self.dilation_schedule!r}")
        elif any(int(d) < 1 for d in self.dilation_schedule):
            raise ConfigurationError("dilations must be >= 1")

    def dilation(self, stage: int) -> int:
        """Dilation of the 1-based ``stage``; canonical convs never dilate."""
        if stage < 1:
            raise ConfigurationError("stage index is 1-based")
        if self.mode == "canonical_conv":
            return 1
        if self.dilation_schedule == "exponential":
            return 2 ** (stage - 1)
        if self.dilation_schedule == "linear":
            return stage
        return int(self.dilation_schedule[stage - 1])

    def shift(self) -> int:
        # canonical convs are centred (zero padded both sides); dilated ones look back only
        return (self.kernel - 1) // 2 if self.mode == "canonical_conv" else 0


class DistillStage(Module):
    """conv -> ELU -> causal max-pool; halves the length."""

    def __init__(self, d: int, stage: int, config: ConnectorConfig, rng: np.random.Generator):
        self.stage, self.config = stage, config
        self.dilation = config.dilation(stage)
        self.weight = init_weight(rng, (config.kernel, d, d), config.kernel * d, d)
        self.bias = Tensor(np.zeros(d), requires_grad=True) if config.bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return distill_stage(x, self.weight, self.dilation, self.config, self.bias)


def distill_stage(x: Tensor, weight: Tensor, dilation: int, config: ConnectorConfig,
                  bias: Tensor | None = None) -> Tensor:
    if x.shape[-2] % config.pool_stride:
        raise ConfigurationError(f"distilling needs an even length, got {x.shape[-2]}")
    y = T.conv1d(x, weight, dilation=dilation, shift=config.shift(), bias=bias)
    return T.causal_maxpool1d(T.elu(y), config.pool_kernel, config.pool_stride)


# ---------------------------------------------------------------------------
# receptive field


@dataclass(frozen=True)
class StageGeometry:
    kernel: int = 3
    dilation: int = 1
    pool_kernel: int = 3
    pool_stride: int = 2


def stage_geometries(config: ConnectorConfig, n_stages: int) -> list[StageGeometry]:
    return [StageGeometry(config.kernel, config.dilation(i), config.pool_kernel, config.pool_stride)
            for i in range(1, n_stages + 1)]


def receptive_span(stages: Sequence[StageGeometry]) -> int:
    """Original-timeline positions feeding the final output, ignoring edge clipping."""
    span = 1
    for g in reversed(stages):
        span = (span - 1) * g.pool_stride + g.pool_kernel
        span += (g.kernel - 1) * g.dilation
    return span


def conv_only_span(stages: Sequence[StageGeometry]) -> int:
    """Span of the conv taps alone, each measured at its own stage's resolution."""
    return 1 + sum((g.kernel - 1) * g.dilation for g in stages)


def impulse_trace_span(stages: Sequence[StageGeometry], length: int | None = None) -> int:
    """Count input positions whose one-hot impulse reaches the last output.

    Runs the real causal conv and max-pool kernels with all-ones filters on a
    batch of one-hot sequences, one impulse position per batch row.
    """
    n = len(stages)
    if length is None:
        length = (2**n) * (receptive_span(stages) + 8)
    length += (-length) % (2**n)
    x = Tensor(np.eye(length)[:, :, None])
    with T.no_grad():
        for g in stages:
            w = Tensor(np.ones((g.kernel, 1, 1)))
            x = T.causal_maxpool1d(T.elu(T.conv1d(x, w, g.dilation)), g.pool_kernel, g.pool_stride)
    return int(np.count_nonzero(x.data[:, -1, 0] > 0))


# ---------------------------------------------------------------------------
# passthrough


class FeaturePyramid:
    def __init__(self, maps: Sequence[Tensor]):
        if not maps:
            raise PyramidError("empty pyramid")
        d = maps[0].shape[-1]
        for a, b in zip(maps, maps[1:]):
            if a.shape[-2] != 2 * b.shape[-2]:
                raise PyramidError(f"lengths must halve exactly: {a.shape[-2]} -> {b.shape[-2]}")
        if any(m.shape[-1] != d for m in maps):
            raise PyramidError("all pyramid maps must share the feature dim")
        self.maps = list(maps)

    def __len__(self):
        return len(self.maps)


def passthrough_fuse(pyramid: FeaturePyramid | Sequence[Tensor]) -> Tensor:
    """Chunk every map to the coarsest length and stack all chunks along dim.

    Map k of n contributes 2**(n-k) chunks in time order; maps are taken in
    pyramid order, so the result has (2**n - 1) * d channels.
    """
    if not isinstance(pyramid, FeaturePyramid):
        pyramid = FeaturePyramid(pyramid)
    out_len = pyramid.maps[-1].shape[-2]
    chunks = []
    for m in pyramid.maps:
        for start in range(0, m.shape[-2], out_len):
            chunks.append(T.take(m, start, start + out_len, axis=-2))
    return T.concat_dim(chunks)


class Transition(Module):
    """1x1 convolution from the fused width back to d."""

    def __init__(self, d_in: int, d: int, rng: np.random.Generator, bias: bool = False):
        self.d_in = d_in
        self.proj = Linear(d_in, d, rng, bias)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"transition expects dim {self.d_in}, got {x.shape[-1]}")
        return self.proj(x)

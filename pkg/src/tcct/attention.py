"""Attention kernels: canonical, ProbSparse, LogSparse and the CSP wrapper.

Activations are (batch, length, dim); heads are split out as
(batch, heads, length, d_head) inside :class:`MultiHeadAttention`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Linear, Module
from .tensor import DimensionError, Tensor

INNER_KINDS = ("canonical", "probsparse", "logsparse")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionSpec:
    inner: str = "canonical"
    csp: bool = False
    masked: bool = False
    heads: int = 1
    model_dim: int = 8
    sampling_factor: float = 5.0
    csp_split: float = 0.5
    bias: bool = False

    def __post_init__(self):
        if self.inner not in INNER_KINDS:
            raise ConfigurationError(f"unknown attention kind {self.inner!r}")
        if self.sampling_factor <= 0:
            raise ConfigurationError("sampling_factor must be positive")
        if self.heads < 1 or self.model_dim < 1:
            raise ConfigurationError("heads and model_dim must be positive")
        if self.csp:
            if not 0 < self.csp_split < 1:
                raise ConfigurationError("csp_split must lie in (0, 1)")
            if self.conv_dim + self.attn_dim != self.model_dim or self.conv_dim < 1:
                raise ConfigurationError(
                    f"csp_split {self.csp_split} does not divide d={self.model_dim} into integer parts"
                )
        if self.attn_dim % self.heads:
            raise ConfigurationError(
                f"attention width {self.attn_dim} not divisible by {self.heads} heads"
                + (" (CSP needs d divisible by 2H)" if self.csp else "")
            )

    @property
    def conv_dim(self) -> int:
        """Width of the 1x1-convolution path (0 without CSP)."""
        if not self.csp:
            return 0
        return int(round(self.model_dim * self.csp_split))

    @property
    def attn_dim(self) -> int:
        return self.model_dim - self.conv_dim

    @property
    def head_dim(self) -> int:
        return self.attn_dim // self.heads


# ---------------------------------------------------------------------------
# masks and scoring


def causal_mask(lq: int, lk: int | None = None) -> np.ndarray:
    """Allowed[i, j] iff j <= i."""
    lk = lq if lk is None else lk
    return np.tril(np.ones((lq, lk), dtype=bool))


def logsparse_mask(L: int) -> np.ndarray:
    """Position i sees itself and i - 2**j for j >= 0."""
    if L < 1:
        raise DimensionError("logsparse mask needs L >= 1")
    allowed = np.eye(L, dtype=bool)
    step = 1
    while step < L:
        i = np.arange(step, L)
        allowed[i, i - step] = True
        step *= 2
    return allowed


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(d_h)) V over the last two axes."""
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query dim {Q.shape[-1]} != key dim {K.shape[-1]}")
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError("keys and values must have the same length")
    scores = T.matmul(Q, T.swap_last(K)) * (1.0 / math.sqrt(Q.shape[-1]))
    return T.matmul(T.softmax_lastdim(scores, mask), V)


def n_sampled_keys(L_K: int, c: float) -> int:
    return min(max(1, math.ceil(c * math.log(L_K))), L_K)


def n_top_queries(L_Q: int, c: float) -> int:
    return min(max(1, math.ceil(c * math.log(L_Q))), L_Q)


def sample_keys(L_K: int, c: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of ceil(c ln L_K) key positions, without replacement, sorted."""
    return np.sort(rng.choice(L_K, size=n_sampled_keys(L_K, c), replace=False))


def probsparse_measure(Q, K_sampled, positions: np.ndarray | None = None) -> np.ndarray:
    """max minus mean of the scaled query-key scores over the sampled keys.

    With ``positions`` (the sampled keys' time indices) query i only looks at
    sampled keys at or before i; a query with no such key scores 0.
    """
    q = Q.data if isinstance(Q, Tensor) else np.asarray(Q)
    k = K_sampled.data if isinstance(K_sampled, Tensor) else np.asarray(K_sampled)
    if k.shape[-2] == 0:
        raise DimensionError("probsparse measure needs at least one sampled key")
    s = np.matmul(q, np.swapaxes(k, -1, -2)) / math.sqrt(q.shape[-1])
    if positions is None:
        return s.max(axis=-1) - s.mean(axis=-1)
    allowed = positions[None, :] <= np.arange(q.shape[-2])[:, None]
    cnt = allowed.sum(axis=-1)
    smax = np.where(allowed, s, -np.inf).max(axis=-1)
    smean = np.where(allowed, s, 0.0).sum(axis=-1) / np.maximum(cnt, 1)
    return np.where(cnt > 0, smax - smean, 0.0)


def select_top(scores: np.ndarray, u: int) -> np.ndarray:
    """Boolean mask of the u highest scores per row; ties go to the lower index."""
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :u]
    sel = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(sel, order, True, axis=-1)
    return sel


def select_prefix_top(scores: np.ndarray, u: int) -> np.ndarray:
    """Causal selection: query i is kept iff fewer than u earlier queries score >= it."""
    L = scores.shape[-1]
    earlier = np.tril(np.ones((L, L), dtype=bool), k=-1)
    ahead = (scores[..., None, :] >= scores[..., :, None]) & earlier
    return ahead.sum(axis=-1) < u


def probsparse_attention(
    Q: Tensor,
    K: Tensor,
    V: Tensor,
    c: float = 5.0,
    masked: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Exact attention for dominant queries, a cheap fill for the rest.

    Unmasked: the top ceil(c ln L_Q) queries by the sparsity measure are kept and
    the others get the mean of V. Masked: selection uses the causal measure and
    the prefix rule of :func:`select_prefix_top`, and the fill is the running
    mean of V, so no output depends on later positions.
    """
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query dim {Q.shape[-1]} != key dim {K.shape[-1]}")
    rng = rng if rng is not None else np.random.default_rng(0)
    L_Q, L_K = Q.shape[-2], K.shape[-2]
    if masked and L_Q != L_K:
        raise DimensionError("masked ProbSparse attention is self-attention only")
    u = n_top_queries(L_Q, c)
    idx = sample_keys(L_K, c, rng)
    ksamp = K.data[..., idx, :]
    if masked:
        sel = select_prefix_top(probsparse_measure(Q, ksamp, positions=idx), u)
    else:
        sel = select_top(probsparse_measure(Q, ksamp), u)

    if masked:
        # fixed full width: a selection-dependent width would change the matmul
        # shapes, and BLAS rounding with them, whenever a later query flips
        gidx = np.broadcast_to(np.arange(L_Q), sel.shape)
        gsel = sel
    else:
        # exactly u selected per row; selected queries in time order
        gidx = np.argsort(~sel, axis=-1, kind="stable")[..., :u]
        gsel = np.ones(gidx.shape, dtype=bool)

    if masked:
        fill = T.cumsum(V, axis=-2) * (1.0 / np.arange(1, L_K + 1))[:, None]
    else:
        fill = T.add(T.mean_axis(V, axis=-2), np.zeros(V.shape[:-2] + (L_Q, V.shape[-1])))

    Qg = T.gather(Q, gidx[..., None], axis=-2)
    mask = gidx[..., :, None] >= np.arange(L_K) if masked else None
    attn = scaled_dot_attention(Qg, K, V, mask)
    if not gsel.all():
        keep = gsel[..., None].astype(float)
        attn = attn * keep + T.gather(fill, gidx[..., None], axis=-2) * (1.0 - keep)
    return T.scatter(fill, gidx[..., None], attn, axis=-2)


# ---------------------------------------------------------------------------
# blocks


class MultiHeadAttention(Module):
    """Q/K/V projections, per-head attention, head concat, output projection."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, inner: str = "canonical",
                 masked: bool = False, sampling_factor: float = 5.0, bias: bool = False, seed: int = 0):
        if dim % heads:
            raise ConfigurationError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.inner, self.masked = inner, masked
        self.sampling_factor = sampling_factor
        self.seed = seed
        self.wq = Linear(dim, dim, rng, bias)
        self.wk = Linear(dim, dim, rng, bias)
        self.wv = Linear(dim, dim, rng, bias)
        self.wo = Linear(dim, dim, rng, bias)

    def _heads(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        return T.transpose(T.reshape(x, (B, L, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def attend(self, Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
        L_Q, L_K = Q.shape[-2], K.shape[-2]
        if self.inner == "probsparse":
            rng = np.random.default_rng([self.seed, L_Q, L_K])
            return probsparse_attention(Q, K, V, self.sampling_factor, self.masked, rng)
        if self.inner == "logsparse":
            if L_Q != L_K:
                raise DimensionError("LogSparse attention is self-attention only")
            return scaled_dot_attention(Q, K, V, logsparse_mask(L_Q))
        return scaled_dot_attention(Q, K, V, causal_mask(L_Q, L_K) if self.masked else None)

    def __call__(self, x_q: Tensor, x_kv: Tensor | None = None) -> Tensor:
        x_kv = x_q if x_kv is None else x_kv
        if x_q.shape[-1] != self.dim or x_kv.shape[-1] != self.dim:
            raise DimensionError(f"attention expects dim {self.dim}, got {x_q.shape[-1]}/{x_kv.shape[-1]}")
        Q, K, V = self._heads(self.wq(x_q)), self._heads(self.wk(x_kv)), self._heads(self.wv(x_kv))
        out = self.attend(Q, K, V)
        B, _, L, _ = out.shape
        return self.wo(T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, L, self.dim)))


class CSPAttention(Module):
    """Channel split: first part through a 1x1 conv, second through attention."""

    def __init__(self, spec: AttentionSpec, rng: np.random.Generator, seed: int = 0):
        if not spec.csp:
            raise ConfigurationError("CSPAttention needs spec.csp")
        self.spec = spec
        self.conv_dim, self.attn_dim = spec.conv_dim, spec.attn_dim
        self.w_c = Linear(self.conv_dim, self.conv_dim, rng, spec.bias)
        self.attn = MultiHeadAttention(self.attn_dim, spec.heads, rng, spec.inner, spec.masked,
                                       spec.sampling_factor, spec.bias, seed)

    def __call__(self, x: Tensor, x_kv: Tensor | None = None) -> Tensor:
        if x_kv is not None:
            raise ConfigurationError("CSPAttention wraps self-attention only")
        if x.shape[-1] != self.spec.model_dim:
            raise DimensionError(f"CSPAttention expects dim {self.spec.model_dim}, got {x.shape[-1]}")
        x1, x2 = T.split_dim(x, [self.conv_dim, self.attn_dim])
        return T.concat_dim([self.w_c(x1), self.attn(x2)])


def build_attention(spec: AttentionSpec, rng: np.random.Generator, seed: int = 0):
    if spec.csp:
        return CSPAttention(spec, rng, seed)
    return MultiHeadAttention(spec.model_dim, spec.heads, rng, spec.inner, spec.masked,
                              spec.sampling_factor, spec.bias, seed)

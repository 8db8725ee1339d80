"""Informer-style encoder/decoder with the TCCT variants as configuration flags."""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import AttentionSpec, ConfigurationError, MultiHeadAttention, build_attention
from .connectors import ConnectorConfig, DistillStage, FeaturePyramid, Transition, passthrough_fuse
from .layers import FeedForward, LayerNorm, Linear, Module
from .tensor import DimensionError, Tensor

N_TIME_FEATURES = 4

VARIANTS: dict[str, dict] = {
    "Informer": dict(csp=False, dilated=False, passthrough=False, full_distilling=False),
    "Informer+": dict(csp=False, dilated=False, passthrough=False, full_distilling=True),
    "TCCT_I": dict(csp=True, dilated=False, passthrough=False, full_distilling=False),
    "TCCT_II": dict(csp=True, dilated=True, passthrough=False, full_distilling=False),
    "TCCT_III": dict(csp=True, dilated=True, passthrough=True, full_distilling=False),
    "TCCT_IV": dict(csp=False, dilated=True, passthrough=False, full_distilling=False),
    "TCCT_V": dict(csp=False, dilated=False, passthrough=True, full_distilling=False),
    "TCCT_VI": dict(csp=False, dilated=True, passthrough=True, full_distilling=False),
}


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 96
    pred_len: int = 24
    token_len: int | None = None
    n_series: int = 1
    d_model: int = 32
    heads: int = 4
    enc_blocks: int = 3
    dec_layers: int = 2
    csp: bool = False
    dilated: bool = False
    passthrough: bool = False
    full_distilling: bool = False
    inner: str = "probsparse"
    feedforward_dim: int | None = None
    sampling_factor: float = 5.0
    kernel: int = 3
    dilation_schedule: str = "exponential"
    residual: bool = True
    bias: bool = False
    time_features: bool = True
    positional: bool = True
    seed: int = 0
    variant: str = "custom"

    def __post_init__(self):
        if self.token_len is None:
            object.__setattr__(self, "token_len", self.input_len)
        if self.feedforward_dim is None:
            object.__setattr__(self, "feedforward_dim", 4 * self.d_model)
        if min(self.input_len, self.pred_len, self.n_series, self.enc_blocks, self.dec_layers) < 1:
            raise ConfigurationError("lengths, series count and layer counts must be positive")
        if not 0 <= self.token_len <= self.input_len:
            raise ConfigurationError("token_len must lie in [0, input_len]")
        if self.full_distilling and self.passthrough:
            raise ConfigurationError("full_distilling and passthrough are competing fusions; pick one")
        if self.full_distilling and self.enc_blocks < 2:
            raise ConfigurationError("full distilling needs at least 2 encoder blocks")
        if self.input_len % 2 ** (self.enc_blocks - 1):
            raise ConfigurationError(
                f"input_len {self.input_len} not divisible by 2^{self.enc_blocks - 1}"
            )
        # validates head/CSP divisibility
        self.attention_spec()

    @classmethod
    def from_variant(cls, name: str, **overrides) -> ModelConfig:
        if name not in VARIANTS:
            raise ConfigurationError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        return cls(**{**VARIANTS[name], "variant": name, **overrides})

    def attention_spec(self, masked: bool = False) -> AttentionSpec:
        return AttentionSpec(self.inner, self.csp, masked, self.heads, self.d_model,
                             self.sampling_factor, bias=self.bias)

    def connector_config(self) -> ConnectorConfig:
        mode = "dilated_causal" if self.dilated else "canonical_conv"
        return ConnectorConfig(self.kernel, mode, self.dilation_schedule, bias=self.bias)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# embedding


def positional_encoding(L: int, d: int) -> np.ndarray:
    pos = np.arange(L)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe = np.zeros((L, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d // 2])
    return pe


class Embedding(Module):
    def __init__(self, n_series: int, d: int, rng: np.random.Generator, positional: bool = True,
                 time_features: bool = True, bias: bool = False):
        self.value = Linear(n_series, d, rng, bias)
        self.time = Linear(N_TIME_FEATURES, d, rng, bias) if time_features else None
        self.positional = positional
        self.d = d

    def __call__(self, raw: Tensor, marks: Tensor | None = None) -> Tensor:
        x = self.value(raw)
        if self.positional:
            x = T.add(x, positional_encoding(raw.shape[-2], self.d))
        if self.time is not None and marks is not None:
            x = T.add(x, self.time(marks))
        return x


# ---------------------------------------------------------------------------
# encoder


class EncoderBlock(Module):
    """Attention block (CSP-wrapped per config) plus feedforward, pre-norm residual."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, seed: int):
        d = config.d_model
        self.residual = config.residual
        self.norm1, self.norm2 = LayerNorm(d), LayerNorm(d)
        self.attn = build_attention(config.attention_spec(masked=False), rng, seed)
        self.ffn = FeedForward(d, config.feedforward_dim, rng, config.bias)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.attn(self.norm1(x))
        x = T.add(x, h) if self.residual else h
        h = self.ffn(self.norm2(x))
        return T.add(x, h) if self.residual else h


class Encoder(Module):
    def __init__(self, config: ModelConfig, n_blocks: int, rng: np.random.Generator, seed: int,
                 passthrough: bool = False):
        d = config.d_model
        conn = config.connector_config()
        self.blocks = [EncoderBlock(config, rng, seed + i) for i in range(n_blocks)]
        self.connectors = [DistillStage(d, i + 1, conn, rng) for i in range(n_blocks - 1)]
        self.transition = Transition((2**n_blocks - 1) * d, d, rng, config.bias) if passthrough else None
        self.norm = LayerNorm(d)

    def feature_maps(self, x: Tensor) -> list[Tensor]:
        """Each block's output, taken before the connector that follows it."""
        maps = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            maps.append(x)
            if i < len(self.connectors):
                x = self.connectors[i](x)
        return maps

    def __call__(self, x: Tensor) -> Tensor:
        n = len(self.blocks)
        if x.shape[-2] % 2 ** (n - 1):
            raise ConfigurationError(f"length {x.shape[-2]} not divisible by 2^{n - 1}")
        maps = self.feature_maps(x)
        if self.transition is not None:
            out = self.transition(passthrough_fuse(FeaturePyramid(maps)))
        else:
            out = maps[-1]
        return self.norm(out)


class FullDistillEncoder(Module):
    """Main encoder plus k-1 extra encoders on shrinking input suffixes."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, seed: int):
        k = config.enc_blocks
        if k < 2:
            raise ConfigurationError("full distilling needs at least 2 encoder blocks")
        self.encoders = [Encoder(config, k - i, rng, seed + 100 * i) for i in range(k)]
        self.transition = Transition(k * config.d_model, config.d_model, rng, config.bias)

    def suffix_start(self, L: int, i: int) -> int:
        """First input position consumed by extra encoder ``i`` (main encoder is i=0)."""
        return L - L // 2**i

    def __call__(self, x: Tensor) -> Tensor:
        L = x.shape[-2]
        outs = [enc(T.take(x, self.suffix_start(L, i), L, axis=-2)) for i, enc in enumerate(self.encoders)]
        return self.transition(T.concat_dim(outs))


# ---------------------------------------------------------------------------
# decoder


class DecoderLayer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, seed: int):
        d = config.d_model
        self.residual = config.residual
        self.norm1, self.norm2, self.norm3 = LayerNorm(d), LayerNorm(d), LayerNorm(d)
        self.self_attn = build_attention(config.attention_spec(masked=True), rng, seed)
        self.cross_attn = MultiHeadAttention(d, config.heads, rng, "canonical", False, bias=config.bias)
        self.ffn = FeedForward(d, config.feedforward_dim, rng, config.bias)

    def _res(self, x, h):
        return T.add(x, h) if self.residual else h

    def __call__(self, x: Tensor, enc_out: Tensor) -> Tensor:
        x = self._res(x, self.self_attn(self.norm1(x)))
        x = self._res(x, self.cross_attn(self.norm2(x), enc_out))
        return self._res(x, self.ffn(self.norm3(x)))


class Decoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, seed: int):
        self.d = config.d_model
        self.layers = [DecoderLayer(config, rng, seed + i) for i in range(config.dec_layers)]
        self.norm = LayerNorm(config.d_model)

    def __call__(self, x: Tensor, enc_out: Tensor) -> Tensor:
        if enc_out.shape[-1] != self.d:
            raise DimensionError(f"encoder output dim {enc_out.shape[-1]} != decoder dim {self.d}")
        for layer in self.layers:
            x = layer(x, enc_out)
        return self.norm(x)


# ---------------------------------------------------------------------------
# full model


class ForecastModel(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        seed = 1000 * config.seed
        d = config.d_model
        self.enc_embed = Embedding(config.n_series, d, rng, config.positional, config.time_features, config.bias)
        self.dec_embed = Embedding(config.n_series, d, rng, config.positional, config.time_features, config.bias)
        if config.full_distilling:
            self.encoder = FullDistillEncoder(config, rng, seed)
        else:
            self.encoder = Encoder(config, config.enc_blocks, rng, seed, config.passthrough)
        self.decoder = Decoder(config, rng, seed + 500)
        self.projection = Linear(d, config.n_series, rng, config.bias)

    def decoder_input(self, x_enc: np.ndarray) -> np.ndarray:
        """Start token (last token_len inputs) followed by zero placeholders."""
        c = self.config
        token = x_enc[..., x_enc.shape[-2] - c.token_len :, :]
        pad = np.zeros(x_enc.shape[:-2] + (c.pred_len, x_enc.shape[-1]))
        return np.concatenate([token, pad], axis=-2)

    def encode(self, x_enc, marks_enc=None) -> Tensor:
        return self.encoder(self.enc_embed(T.as_tensor(x_enc), _opt(marks_enc)))

    def decode(self, dec_in, enc_out: Tensor, marks_dec=None) -> Tensor:
        return self.decoder(self.dec_embed(T.as_tensor(dec_in), _opt(marks_dec)), enc_out)

    def __call__(self, x_enc, marks_enc=None, marks_dec=None) -> Tensor:
        """(B, input_len, N) -> (B, pred_len, N) in one forward pass.

        ``marks_dec`` covers the token_len + pred_len decoder positions.
        """
        x_enc = x_enc.data if isinstance(x_enc, Tensor) else np.asarray(x_enc, dtype=T.DTYPE)
        c = self.config
        if x_enc.shape[-2] != c.input_len or x_enc.shape[-1] != c.n_series:
            raise DimensionError(
                f"expected window ({c.input_len}, {c.n_series}), got {x_enc.shape[-2:]}"
            )
        enc_out = self.encode(x_enc, marks_enc)
        dec = self.decode(self.decoder_input(x_enc), enc_out, marks_dec)
        out = self.projection(dec)
        L = out.shape[-2]
        return T.take(out, L - c.pred_len, L, axis=-2)


def _opt(x):
    return None if x is None else T.as_tensor(x)


def build_model(config: ModelConfig | str, **overrides) -> ForecastModel:
    if isinstance(config, str):
        config = ModelConfig.from_variant(config, **overrides)
    elif overrides:
        config = dataclasses.replace(config, **overrides)
    return ForecastModel(config)


def rolling_predict(model: ForecastModel, series: np.ndarray, horizon: int, start: int = 0,
                    marks: np.ndarray | None = None) -> np.ndarray:
    """Forecast ``horizon`` steps after ``series[start:start+input_len]``.

    Each step feeds a ground-truth window advanced by pred_len. A trailing
    partial window (horizon not a multiple of pred_len) is dropped.
    """
    c = model.config
    if horizon < c.pred_len:
        raise ConfigurationError(f"horizon {horizon} shorter than pred_len {c.pred_len}")
    steps = horizon // c.pred_len
    need = start + c.input_len + (steps - 1) * c.pred_len
    if need > len(series):
        raise ConfigurationError(f"series of length {len(series)} too short; need {need} rows")
    outs = []
    with T.no_grad():
        for s in range(steps):
            lo = start + s * c.pred_len
            hi = lo + c.input_len
            me = md = None
            if marks is not None:
                me = marks[None, lo:hi]
                md = marks[None, hi - c.token_len : hi + c.pred_len]
            outs.append(model(series[None, lo:hi], me, md).data[0])
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"TCCTCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: ForecastModel, history: list | None = None) -> None:
    """Header, JSON manifest, then float64 little-endian weights in manifest order."""
    weights, blobs, offset = [], [], 0
    for name, p in model.parameters().items():
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        weights.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.size
    manifest = {
        "format": "tcct-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "history": history or [],
        "dtype": "float64-le",
        "weights": weights,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[ForecastModel, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<IQ", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    manifest = json.loads(raw[start : start + n].decode("utf-8"))
    flat = np.frombuffer(raw, dtype="<f8", offset=start + n)
    model = ForecastModel(ModelConfig(**manifest["config"]))
    state = {
        w["name"]: flat[w["offset"] : w["offset"] + w["count"]].reshape(w["shape"])
        for w in manifest["weights"]
    }
    model.load_state_dict(state)
    return model, manifest

"""Multiply-count and parameter accounting for attention blocks.

Two closed forms are kept side by side. The headline accounting charges the
L^2 terms with the full width d in every head (canonical: 4d^2 L + 2HdL^2,
CSP: 1.25d^2 L + HdL^2). The running code splits heads to width d/H, so the
multiplies it actually executes are 4Ld^2 + 2L^2 d and 1.25Ld^2 + L^2 d. The
two agree for H=1 and share the 0.5 / 0.3125 coefficient ratios for every H.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .attention import AttentionSpec, build_attention
from .connectors import ConnectorConfig, conv_only_span, impulse_trace_span, receptive_span, stage_geometries
from .model import ModelConfig


@dataclass
class ComplexityReport:
    variant: str
    L: int
    d: int
    H: int
    l2_coefficient: int
    l1_coefficient: int
    analytic_mults: int
    param_count: int
    empirical_mults: int | None = None
    ratios: dict = field(default_factory=dict)

    def __post_init__(self):
        assert self.analytic_mults == self.l2_coefficient * self.L**2 + self.l1_coefficient * self.L

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _check_csp_dims(d: int, H: int) -> None:
    if d % (2 * H):
        raise ValueError(f"CSP accounting needs d divisible by 2H (d={d}, H={H})")


def analytic_canonical(L: int, d: int, H: int) -> ComplexityReport:
    """Closed-form cost of a canonical block: 4d^2 L + 2HdL^2."""
    if d % H:
        raise ValueError(f"d={d} not divisible by H={H}")
    l2, l1 = 2 * H * d, 4 * d * d
    return ComplexityReport("canonical", L, d, H, l2, l1, l2 * L * L + l1 * L, 4 * d * d)


def analytic_csp(L: int, d: int, H: int) -> ComplexityReport:
    """Closed-form cost of a half-split CSP block: 1.25d^2 L + HdL^2."""
    _check_csp_dims(d, H)
    l2, l1 = H * d, 5 * d * d // 4
    return ComplexityReport("csp", L, d, H, l2, l1, l2 * L * L + l1 * L, 5 * (d // 2) ** 2)


def implementation_canonical(L: int, d: int, H: int) -> ComplexityReport:
    """Multiplies the running canonical block executes: 4Ld^2 + 2L^2 d."""
    if d % H:
        raise ValueError(f"d={d} not divisible by H={H}")
    l2, l1 = 2 * d, 4 * d * d
    return ComplexityReport("canonical", L, d, H, l2, l1, l2 * L * L + l1 * L, 4 * d * d)


def implementation_csp(L: int, d: int, H: int) -> ComplexityReport:
    """Multiplies the running CSP block executes: 1.25Ld^2 + L^2 d."""
    _check_csp_dims(d, H)
    l2, l1 = d, 5 * d * d // 4
    return ComplexityReport("csp", L, d, H, l2, l1, l2 * L * L + l1 * L, 5 * (d // 2) ** 2)


def coefficient_ratios(csp: ComplexityReport, canonical: ComplexityReport) -> dict[str, Fraction]:
    return {
        "l2": Fraction(csp.l2_coefficient, canonical.l2_coefficient),
        "l1": Fraction(csp.l1_coefficient, canonical.l1_coefficient),
        "params": Fraction(csp.param_count, canonical.param_count),
    }


def memory_accounting(spec: AttentionSpec) -> int:
    """Weight scalars of one attention block: 4d^2, or 5(d/2)^2 under a half CSP split."""
    n = 4 * spec.attn_dim**2 + spec.conv_dim**2
    if spec.bias:
        n += 4 * spec.attn_dim + spec.conv_dim
    return n


def empirical_count(block, x: T.Tensor) -> int:
    """Multiplies executed by one forward of ``block`` on ``x``."""
    counter = T.MultiplyCounter()
    with T.no_grad(), T.counting(counter):
        block(x)
    return counter.read_and_reset()


def measured_block(L: int, d: int, H: int, csp: bool, inner: str = "canonical", seed: int = 0):
    spec = AttentionSpec(inner=inner, csp=csp, heads=H, model_dim=d)
    block = build_attention(spec, np.random.default_rng(seed), seed)
    x = T.Tensor(np.random.default_rng(seed + 1).standard_normal((1, L, d)))
    return block, x


def block_report(L: int, d: int, H: int, csp: bool, inner: str = "canonical", seed: int = 0) -> ComplexityReport:
    """Closed form plus the measured count of a real forward pass."""
    rep = analytic_csp(L, d, H) if csp else analytic_canonical(L, d, H)
    impl = implementation_csp(L, d, H) if csp else implementation_canonical(L, d, H)
    block, x = measured_block(L, d, H, csp, inner, seed)
    rep.empirical_mults = empirical_count(block, x)
    rep.param_count = block.param_count()
    rep.variant = ("csp" if csp else "canonical") + ("" if inner == "canonical" else f"-{inner}")
    rep.ratios = {"implementation_mults": impl.analytic_mults}
    return rep


def sweep(lengths, d: int, H: int, inner: str = "canonical", seed: int = 0) -> list[dict]:
    """One row per L comparing canonical and CSP blocks."""
    lengths = list(lengths)
    if not lengths:
        raise ValueError("empty length sweep")
    rows = []
    for L in lengths:
        can, csp = block_report(L, d, H, False, inner, seed), block_report(L, d, H, True, inner, seed)
        rows.append({
            "L": L, "d": d, "H": H, "inner": inner,
            "canonical_analytic": can.analytic_mults,
            "csp_analytic": csp.analytic_mults,
            "canonical_implementation": can.ratios["implementation_mults"],
            "csp_implementation": csp.ratios["implementation_mults"],
            "canonical_empirical": can.empirical_mults,
            "csp_empirical": csp.empirical_mults,
            "analytic_ratio": csp.analytic_mults / can.analytic_mults,
            "empirical_ratio": csp.empirical_mults / can.empirical_mults,
            "canonical_params": can.param_count,
            "csp_params": csp.param_count,
        })
    return rows


# ---------------------------------------------------------------------------
# receptive field


def _growth_label(spans: list[int]) -> str:
    diffs = np.diff(spans)
    if len(diffs) < 2:
        return "undetermined"
    if np.all(diffs == diffs[0]):
        return "linear"
    if np.all(diffs[1:] > diffs[:-1]):
        return "exponential"
    return "irregular"


def receptive_report(config: ModelConfig, horizon: int = 4) -> dict:
    """Spans after each connector stage for dilated vs canonical connectors.

    ``growth`` classifies how the conv taps alone widen with depth (pooling
    doubles both modes equally), fitted over max(stages, horizon) stages.
    """
    n = config.enc_blocks - 1
    out = {"enc_blocks": config.enc_blocks, "kernel": config.kernel, "stages": []}
    modes = {
        "dilated": ConnectorConfig(config.kernel, "dilated_causal", config.dilation_schedule),
        "canonical": ConnectorConfig(config.kernel, "canonical_conv"),
    }
    for j in range(n + 1):
        row = {"stages": j}
        for name, cc in modes.items():
            geo = stage_geometries(cc, j)
            row[name] = receptive_span(geo)
            row[f"{name}_traced"] = impulse_trace_span(geo)
        out["stages"].append(row)
    m = max(n, horizon)
    out["growth"] = {
        name: _growth_label([conv_only_span(stage_geometries(cc, j)) for j in range(1, m + 1)])
        for name, cc in modes.items()
    }
    return out

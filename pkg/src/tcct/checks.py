"""Invariant suites runnable from the command line (`tcct check`).

Each check returns a :class:`CheckResult`; they are deliberately small so the
whole set finishes in seconds. The pytest suite covers the same ground in more
depth.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import complexity as C
from . import tensor as T
from .attention import AttentionSpec, build_attention, probsparse_attention, scaled_dot_attention
from .connectors import ConnectorConfig, impulse_trace_span, receptive_span, stage_geometries
from .model import VARIANTS, ModelConfig, build_model


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def check_complexity_ratios() -> CheckResult:
    bad = []
    for d in range(16, 129, 16):
        for H in (1, 2, 4, 8):
            if d % (2 * H):
                continue
            r = C.coefficient_ratios(C.analytic_csp(96, d, H), C.analytic_canonical(96, d, H))
            if r["l2"] != Fraction(1, 2) or r["l1"] != Fraction(5, 16) or r["params"] != Fraction(5, 16):
                bad.append((d, H))
    return CheckResult("complexity ratios", not bad, f"violations {bad}" if bad else "0.5 / 0.3125 / 0.3125 exact")


def check_empirical_counts() -> CheckResult:
    bad = []
    for L in (16, 32, 64):
        for csp in (False, True):
            rep = C.block_report(L, 16, 2, csp)
            if rep.empirical_mults != rep.ratios["implementation_mults"]:
                bad.append((L, csp, rep.empirical_mults))
    return CheckResult("empirical multiply counts", not bad, f"mismatches {bad}" if bad else "exact")


def check_receptive_field() -> CheckResult:
    spans = {}
    for n in (2, 3):
        for mode in ("dilated_causal", "canonical_conv"):
            geo = stage_geometries(ConnectorConfig(mode=mode), n)
            a, b = receptive_span(geo), impulse_trace_span(geo)
            if a != b:
                return CheckResult("receptive field", False, f"analytic {a} != traced {b} ({mode}, {n})")
            spans[n, mode] = a
    ok = spans[2, "dilated_causal"] == 17 and spans[2, "canonical_conv"] == 13
    r2 = spans[2, "dilated_causal"] / spans[2, "canonical_conv"]
    r3 = spans[3, "dilated_causal"] / spans[3, "canonical_conv"]
    ok = ok and r3 > r2
    return CheckResult("receptive field", ok, f"2 stages 17 vs 13, ratio {r2:.3f} -> {r3:.3f}")


def check_probsparse_equivalence(trials: int = 10, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        Q, K, V = (T.Tensor(rng.standard_normal((1, 2, 12, 4))) for _ in range(3))
        for masked in (False, True):
            mask = np.tril(np.ones((12, 12), bool)) if masked else None
            a = probsparse_attention(Q, K, V, c=100.0, masked=masked)
            worst = max(worst, float(np.abs(a.data - scaled_dot_attention(Q, K, V, mask).data).max()))
    return CheckResult("probsparse u=L_Q equivalence", worst <= 1e-10, f"max abs diff {worst:.2e}")


def check_decoder_causality(trials: int = 3, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for name in VARIANTS:
        m = build_model(name, input_len=16, pred_len=8, n_series=2, d_model=8, heads=2, seed=seed)
        with T.no_grad():
            enc = m.encode(rng.standard_normal((1, 16, 2)))
            for _ in range(trials):
                dec = rng.standard_normal((1, 24, 2))
                t = int(rng.integers(0, 23))
                pert = dec.copy()
                pert[:, t + 1 :] += rng.standard_normal(pert[:, t + 1 :].shape)
                a, b = m.decode(dec, enc).data, m.decode(pert, enc).data
                if not np.array_equal(a[:, : t + 1], b[:, : t + 1]):
                    return CheckResult("decoder causality", False, f"{name} leaks at t={t}")
    return CheckResult("decoder causality", True, f"{len(VARIANTS)} variants x {trials} trials exact")


def check_block_gradient(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    spec = AttentionSpec(inner="canonical", csp=True, heads=2, model_dim=8)
    block = build_attention(spec, rng)
    x = T.Tensor(rng.standard_normal((2, 4, 8)), requires_grad=True)
    target = rng.standard_normal((2, 4, 8))
    params = {"x": x, **block.parameters()}
    rep = T.finite_diff_check(lambda: T.mse_loss(block(x), target), params)
    return CheckResult("CSPAttention gradient", rep.passed, f"max rel err {rep.max_rel_error:.2e}")


SUITES = {
    "complexity": check_complexity_ratios,
    "counts": check_empirical_counts,
    "receptive": check_receptive_field,
    "probsparse": check_probsparse_equivalence,
    "causality": check_decoder_causality,
    "gradient": check_block_gradient,
}


def run_checks(names=None) -> list[CheckResult]:
    names = list(SUITES) if not names else names
    return [SUITES[n]() for n in names]

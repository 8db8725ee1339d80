"""Command-line front end: ``tcct run | analyze | synth | check``.

Exit codes: 0 ok, 2 usage, 3 unknown variant, 4 data error, 5 configuration
error, 6 invariant failure, 7 training failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import complexity as C
from .attention import ConfigurationError
from .checks import SUITES, run_checks
from .data import (IngestionError, SplitError, WindowError, WindowSpec, load_csv, make_windows,
                   split_by_months, split_by_time, synth_series, zscore)
from .model import VARIANTS, ModelConfig, build_model
from .svg import line_chart
from .train import TrainConfig, TrainingError, evaluate, repeat_stats, train

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("tcct")

EXIT_OK, EXIT_USAGE, EXIT_VARIANT, EXIT_DATA, EXIT_CONFIG, EXIT_INVARIANT, EXIT_TRAIN = 0, 2, 3, 4, 5, 6, 7
OUT_ENV = "TCCT_OUT"
DEFAULT_SWEEP = (48, 96, 144, 192, 240, 288, 336, 384, 432)
METRIC_FIELDS = ("variant", "dataset", "mode", "pred_len", "input_len", "run_seed", "mse", "mae", "msd", "cv_percent")


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


@dataclass(frozen=True)
class ExperimentSpec:
    variant: str = "TCCT_III"
    data: str | None = None
    target: str = "OT"
    synth_kind: str = "sine_mix"
    synth_length: int = 2000
    synth_n: int = 3
    synth_noise: float = 0.05
    synth_seed: int = 0
    mode: str = "multi"
    input_len: int = 96
    pred_lens: tuple[int, ...] = (24,)
    repeats: int = 1
    seed: int = 0
    split: str = "fractions"
    fractions: tuple[float, ...] = (0.6, 0.2, 0.2)
    months: tuple[int, ...] = (12, 4, 4)
    d_model: int = 16
    heads: int = 2
    enc_blocks: int = 3
    dec_layers: int = 2
    epochs: int = 6
    batch: int = 32
    lr0: float = 1e-4
    patience: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise CliError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}", EXIT_VARIANT)
        if not self.pred_lens or any(p < 1 for p in self.pred_lens):
            raise CliError("pred_len entries must be >= 1", EXIT_CONFIG)
        if self.mode not in ("uni", "multi"):
            raise CliError(f"mode must be uni or multi, got {self.mode!r}", EXIT_CONFIG)
        if self.repeats < 1:
            raise CliError("repeats must be >= 1", EXIT_CONFIG)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @property
    def dataset(self) -> str:
        return Path(self.data).stem if self.data else f"synth-{self.synth_kind}"

    def model_config(self, pred_len: int, n_series: int, seed: int) -> ModelConfig:
        return ModelConfig.from_variant(
            self.variant, input_len=self.input_len, pred_len=pred_len, n_series=n_series,
            d_model=self.d_model, heads=self.heads, enc_blocks=self.enc_blocks,
            dec_layers=self.dec_layers, seed=seed,
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, epochs=self.epochs, batch=self.batch, patience=self.patience,
                           repeats=self.repeats, seed=seed)


# ---------------------------------------------------------------------------
# config file handling

_CONFIG_KEYS = {
    "experiment": {"variant": "variant", "mode": "mode", "input_len": "input_len", "pred_len": "pred_lens",
                   "repeats": "repeats", "seed": "seed", "split": "split", "fractions": "fractions",
                   "months": "months"},
    "data": {"path": "data", "target": "target"},
    "synth": {"kind": "synth_kind", "length": "synth_length", "n_series": "synth_n", "noise": "synth_noise",
              "seed": "synth_seed"},
    "model": {"d_model": "d_model", "heads": "heads", "enc_blocks": "enc_blocks", "dec_layers": "dec_layers"},
    "train": {"epochs": "epochs", "batch": "batch", "lr0": "lr0", "patience": "patience"},
}


def load_config(path) -> dict:
    """Flatten a TOML experiment file into ExperimentSpec keyword arguments."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    out = {}
    for section, keys in _CONFIG_KEYS.items():
        table = doc.get(section, {})
        if section == "synth":
            table = doc.get("data", {}).get("synth", table)
        for key, val in table.items():
            if isinstance(val, dict):
                continue
            if key not in keys:
                raise CliError(f"{path}: unknown key [{section}] {key}", EXIT_CONFIG)
            out[keys[key]] = tuple(val) if isinstance(val, list) else val
    if isinstance(out.get("pred_lens"), int):
        out["pred_lens"] = (out["pred_lens"],)
    return out


def _spec_from_args(args) -> ExperimentSpec:
    fields: dict = {}
    if getattr(args, "from_manifest", None):
        man = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
        fields.update({k: tuple(v) if isinstance(v, list) else v for k, v in man["spec"].items()})
    if args.config:
        fields.update(load_config(args.config))
    flags = {
        "variant": args.variant, "data": args.data, "mode": args.mode, "input_len": args.input_len,
        "pred_lens": tuple(args.pred_len) if args.pred_len else None, "repeats": args.repeats,
        "seed": args.seed, "d_model": args.d_model, "heads": args.heads, "epochs": args.epochs,
        "target": args.target, "synth_length": args.synth_length, "synth_n": args.synth_n,
        "synth_kind": args.synth_kind, "split": args.split,
    }
    fields.update({k: v for k, v in flags.items() if v is not None})
    return ExperimentSpec(**fields)


# ---------------------------------------------------------------------------
# run


def _load_frame(spec: ExperimentSpec):
    if spec.data:
        try:
            return load_csv(spec.data, spec.target)
        except OSError as err:
            raise CliError(f"cannot read {spec.data}: {err}", EXIT_DATA) from err
        except IngestionError as err:
            raise CliError(str(err), EXIT_DATA) from err
    return synth_series(spec.synth_kind, spec.synth_length, spec.synth_n, spec.synth_seed, spec.synth_noise)


def _segments(spec: ExperimentSpec):
    frame = _load_frame(spec)
    try:
        parts = split_by_months(frame, spec.months) if spec.split == "months" else split_by_time(frame, spec.fractions)
    except SplitError as err:
        raise CliError(str(err), EXIT_DATA) from err
    train_f, state = zscore(parts[0])
    return [train_f] + [zscore(p, state)[0] for p in parts[1:3]]


def _one_repeat(job):
    spec, pred_len, seed = job
    segs = _segments(spec)
    wspec = WindowSpec(spec.input_len, pred_len, mode="univariate" if spec.mode == "uni" else "multivariate")
    windows = [make_windows(s, wspec) for s in segs]
    n_series = windows[0].values.shape[1]
    model = build_model(spec.model_config(pred_len, n_series, seed))
    model, history = train(model, windows[0], windows[1], spec.train_config(seed))
    test_mse, test_mae = evaluate(model, windows[2])
    return {"run_seed": seed, "mse": test_mse, "mae": test_mae, "history": history}


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def metrics_csv(spec: ExperimentSpec, pred_len: int, runs: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(METRIC_FIELDS)
    base = [spec.variant, spec.dataset, spec.mode, pred_len, spec.input_len]
    for r in runs:
        w.writerow([_fmt(v) for v in base + [r["run_seed"], r["mse"], r["mae"], None, None]])
    stats = repeat_stats([r["mse"] for r in runs])
    mean_mae = float(np.mean([r["mae"] for r in runs]))
    w.writerow([_fmt(v) for v in base + ["aggregate", stats.mean, mean_mae, stats.msd, stats.cv_percent]])
    return buf.getvalue()


def complexity_payload(spec: ExperimentSpec) -> dict:
    cfg = spec.model_config(spec.pred_lens[0], 1, spec.seed)
    L, d, H = spec.input_len, spec.d_model, spec.heads
    rep = C.block_report(L, d, H, cfg.csp, cfg.inner, spec.seed)
    can, csp = C.analytic_canonical(L, d, H), C.analytic_csp(L, d, H)
    ratios = {k: float(v) for k, v in C.coefficient_ratios(csp, can).items()}
    ratios["analytic_total"] = csp.analytic_mults / can.analytic_mults
    ratios["implementation_mults"] = rep.ratios["implementation_mults"]
    return {
        "variant": spec.variant, "L": L, "d": d, "H": H, "inner": cfg.inner, "csp": cfg.csp,
        "analytic_mults": rep.analytic_mults, "empirical_mults": rep.empirical_mults,
        "param_count": rep.param_count, "ratios": ratios,
        "receptive": C.receptive_report(cfg),
    }


def _write(path: Path, text: str, written: dict) -> None:
    path.write_text(text, encoding="utf-8", newline="")
    written[path.name] = hashlib.sha256(text.encode("utf-8")).hexdigest()


def run(spec: ExperimentSpec, out: Path, parallel: int = 0) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    try:
        spec.model_config(spec.pred_lens[0], 1, spec.seed)
    except ConfigurationError as err:
        raise CliError(str(err), EXIT_CONFIG) from err
    _segments(spec)  # surface data errors before spending time on training
    written: dict[str, str] = {}
    results = []
    seeds = [spec.seed + r for r in range(spec.repeats)]
    for pred_len in spec.pred_lens:
        jobs = [(spec, pred_len, s) for s in seeds]
        try:
            if parallel > 1 and len(jobs) > 1:
                with ProcessPoolExecutor(max_workers=parallel) as pool:
                    runs = list(pool.map(_one_repeat, jobs))
            else:
                runs = [_one_repeat(j) for j in jobs]
        except (TrainingError, WindowError) as err:
            raise CliError(f"pred_len {pred_len}: {err}", EXIT_TRAIN if isinstance(err, TrainingError) else EXIT_DATA) from err
        runs.sort(key=lambda r: r["run_seed"])
        _write(out / f"metrics_{spec.variant}_pl{pred_len}.csv", metrics_csv(spec, pred_len, runs), written)
        stats = repeat_stats([r["mse"] for r in runs])
        results.append({"pred_len": pred_len, "runs": runs, "mean_mse": stats.mean, "msd": stats.msd,
                        "cv_percent": stats.cv_percent})
        log.info("%s pred_len=%d mse=%.5f msd=%.5f", spec.variant, pred_len, stats.mean, stats.msd)
    payload = complexity_payload(spec)
    _write(out / f"complexity_{spec.variant}.json", json.dumps(payload, indent=2, sort_keys=True) + "\n", written)
    manifest = {
        "toolkit": "tcct", "version": __version__, "numpy": np.__version__,
        "spec": spec.to_dict(), "spec_hash": spec.digest(), "seeds": seeds,
        "files": written, "results": results,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# analyze


def analyze(lengths, d: int, H: int, inner: str, out: Path | None, svg: bool = False) -> list[dict]:
    rows = C.sweep(lengths, d, H, inner)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
        (out / "complexity_sweep.csv").write_text(buf.getvalue(), encoding="utf-8", newline="")
        if svg:
            xs = [r["L"] for r in rows]
            chart = line_chart(xs, {
                "canonical (analytic)": [r["canonical_analytic"] for r in rows],
                "CSP (analytic)": [r["csp_analytic"] for r in rows],
                "canonical (measured)": [r["canonical_empirical"] for r in rows],
                "CSP (measured)": [r["csp_empirical"] for r in rows],
            }, title=f"multiplies vs L (d={d}, H={H})")
            (out / "complexity_sweep.svg").write_text(chart, encoding="utf-8")
    return rows


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcct", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate one variant")
    r.add_argument("--config", help="TOML experiment file; flags override it")
    r.add_argument("--from-manifest", help="rerun the spec recorded in a manifest.json")
    r.add_argument("--variant", choices=None)
    r.add_argument("--data", help="CSV file (date column first); synthetic data when omitted")
    r.add_argument("--target")
    r.add_argument("--mode", choices=("uni", "multi"))
    r.add_argument("--input-len", type=int)
    r.add_argument("--pred-len", type=int, nargs="+")
    r.add_argument("--repeats", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--d-model", type=int)
    r.add_argument("--heads", type=int)
    r.add_argument("--epochs", type=int)
    r.add_argument("--split", choices=("fractions", "months"))
    r.add_argument("--synth-kind", choices=("sine_mix", "ar_noise"))
    r.add_argument("--synth-length", type=int)
    r.add_argument("--synth-n", type=int)
    r.add_argument("--out")
    r.add_argument("--parallel-repeats", type=int, default=0, metavar="N")
    r.add_argument("--check", action="store_true", help="also run the invariant suites")

    a = sub.add_parser("analyze", help="complexity sweep over input lengths")
    a.add_argument("--lengths", type=int, nargs="*", default=list(DEFAULT_SWEEP))
    a.add_argument("--d-model", type=int, default=64)
    a.add_argument("--heads", type=int, default=4)
    a.add_argument("--inner", choices=("canonical", "probsparse", "logsparse"), default="canonical")
    a.add_argument("--out")
    a.add_argument("--svg", action="store_true")

    s = sub.add_parser("synth", help="write a synthetic series as CSV")
    s.add_argument("--kind", choices=("sine_mix", "ar_noise"), default="sine_mix")
    s.add_argument("--length", type=int, default=2000)
    s.add_argument("--n-series", type=int, default=3)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    c = sub.add_parser("check", help="run invariant suites")
    c.add_argument("--suite", nargs="*", choices=sorted(SUITES))
    return p


def _default_out(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV, "runs"))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            spec = _spec_from_args(args)
            code = EXIT_OK
            if args.check:
                results = run_checks()
                for res in results:
                    print(res.line())
                code = EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT
            manifest = run(spec, _default_out(args), args.parallel_repeats)
            for res in manifest["results"]:
                print(f"{spec.variant} pred_len={res['pred_len']} mse={res['mean_mse']:.6f} msd={res['msd']:.6f}")
            return code
        if args.command == "analyze":
            if not args.lengths:
                raise CliError("empty length sweep", EXIT_CONFIG)
            out = _default_out(args)
            rows = analyze(args.lengths, args.d_model, args.heads, args.inner, out, args.svg)
            print(f"{'L':>5} {'canonical':>12} {'csp':>12} {'ratio':>7} {'meas.ratio':>10}")
            for r in rows:
                print(f"{r['L']:>5} {r['canonical_analytic']:>12} {r['csp_analytic']:>12} "
                      f"{r['analytic_ratio']:>7.4f} {r['empirical_ratio']:>10.4f}")
            return EXIT_OK
        if args.command == "synth":
            frame = synth_series(args.kind, args.length, args.n_series, args.seed, args.noise)
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(args.out)
            print(f"wrote {len(frame)} rows x {frame.n_series} series to {args.out}")
            return EXIT_OK
        if args.command == "check":
            results = run_checks(args.suite)
            for res in results:
                print(res.line())
            return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

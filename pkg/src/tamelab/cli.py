"""Experiment orchestration: config files, subcommands, CSV and SVG output.

Subcommands: run | decay | remainder-audit | ledger | r5-demo | sweep.  Each
reads `--config <path>` (flat key = value lines) with `--set key=value`
overrides, validates strictly (unknown keys are errors), and writes its CSVs
into --output_dir.  With --plot an SVG chart of ln ||E_i||_k vs i is emitted;
all outputs are byte-deterministic for identical configs and seeds.

Exit codes: 0 success, 1 config/validation error, 2 numerical failure
(an unexpected escape from the inverse's domain, or too few usable steps).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from . import iteration, ledger, verify
from .problem import (
    PROBLEM_KEYS,
    ProblemConfig,
    parse_flat_config,
)

EXPERIMENTS = ("run", "decay", "remainder-audit", "ledger", "r5-demo", "sweep")

LEDGER_KEYS = ("C", "C_err", "C_r")
EXTRA_KEYS = ("experiment", "output_dir", "plot", "lambda_ell") + LEDGER_KEYS
ALL_KEYS = PROBLEM_KEYS + EXTRA_KEYS

SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated union of problem keys and experiment-level keys."""

    problem: ProblemConfig
    experiment: Optional[str] = None
    output_dir: str = "./out"
    plot: bool = False
    lambda_ell: tuple[float, ...] = ()
    ledger_c: float = 1.0
    ledger_c_err: float = 1.0
    ledger_c_r: float = ledger.DEFAULT_REMAINDER_CONSTANT

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        unknown = [k for k in mapping if k not in ALL_KEYS]
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        problem_map = {k: v for k, v in mapping.items() if k in PROBLEM_KEYS}
        try:
            problem = ProblemConfig.from_mapping(problem_map)
            problem.params().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        kwargs = {"problem": problem}
        if "experiment" in mapping:
            exp = mapping["experiment"]
            if exp not in EXPERIMENTS:
                raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
            kwargs["experiment"] = exp
        if "output_dir" in mapping:
            kwargs["output_dir"] = mapping["output_dir"]
        if "plot" in mapping:
            raw = str(mapping["plot"]).lower()
            if raw not in ("true", "false", "0", "1"):
                raise ConfigError(f"plot must be boolean, got {mapping['plot']!r}")
            kwargs["plot"] = raw in ("true", "1")
        if "lambda_ell" in mapping:
            try:
                values = tuple(float(v) for v in str(mapping["lambda_ell"]).split(","))
            except ValueError as exc:
                raise ConfigError(
                    f"lambda_ell must be a comma list of numbers, got "
                    f"{mapping['lambda_ell']!r}") from exc
            if not values or any(v <= 1 for v in values):
                raise ConfigError("lambda_ell values must exceed 1")
            kwargs["lambda_ell"] = values
        for key, attr in (("C", "ledger_c"), ("C_err", "ledger_c_err"),
                          ("C_r", "ledger_c_r")):
            if key in mapping:
                try:
                    value = float(mapping[key])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key!r}: {mapping[key]!r}") from exc
                if value <= 0:
                    raise ConfigError(f"{key} must be positive")
                kwargs[attr] = value
        return cls(**kwargs)


def load_experiment_config(config_path: Optional[str],
                           overrides: Sequence[str]) -> ExperimentConfig:
    mapping: dict = {}
    if config_path is not None:
        try:
            with open(config_path) as fh:
                mapping = parse_flat_config(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path!r}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    return ExperimentConfig.from_mapping(mapping)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _svg_chart(series: Sequence[tuple[str, list[tuple[float, float]]]],
               x_label: str, y_label: str) -> str:
    """Minimal deterministic SVG line chart: polylines, ticks, legend."""
    width, height = 640.0, 480.0
    ml, mr, mt, mb = 70.0, 20.0, 20.0, 50.0
    xs = [p[0] for _, pts in series for p in pts]
    ys = [p[1] for _, pts in series for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    px = lambda x: ml + (x - x_lo) / (x_hi - x_lo) * (width - ml - mr)
    py = lambda y: height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect width="{width:.0f}" height="{height:.0f}" fill="white"/>',
        f'<line x1="{ml:.2f}" y1="{height - mb:.2f}" x2="{width - mr:.2f}" '
        f'y2="{height - mb:.2f}" stroke="black" stroke-width="1"/>',
        f'<line x1="{ml:.2f}" y1="{mt:.2f}" x2="{ml:.2f}" '
        f'y2="{height - mb:.2f}" stroke="black" stroke-width="1"/>',
    ]
    n_ticks = 5
    for j in range(n_ticks):
        xv = x_lo + j * (x_hi - x_lo) / (n_ticks - 1)
        yv = y_lo + j * (y_hi - y_lo) / (n_ticks - 1)
        parts.append(f'<line x1="{px(xv):.2f}" y1="{height - mb:.2f}" '
                     f'x2="{px(xv):.2f}" y2="{height - mb + 5:.2f}" stroke="black"/>')
        parts.append(f'<text x="{px(xv):.2f}" y="{height - mb + 18:.2f}" '
                     f'font-size="11" text-anchor="middle">{xv:.3g}</text>')
        parts.append(f'<line x1="{ml - 5:.2f}" y1="{py(yv):.2f}" '
                     f'x2="{ml:.2f}" y2="{py(yv):.2f}" stroke="black"/>')
        parts.append(f'<text x="{ml - 8:.2f}" y="{py(yv) + 4:.2f}" '
                     f'font-size="11" text-anchor="end">{yv:.3g}</text>')
    parts.append(f'<text x="{(ml + width - mr) / 2:.2f}" y="{height - 10:.2f}" '
                 f'font-size="13" text-anchor="middle">{x_label}</text>')
    parts.append(f'<text x="16" y="{(mt + height - mb) / 2:.2f}" font-size="13" '
                 f'text-anchor="middle" transform="rotate(-90 16 '
                 f'{(mt + height - mb) / 2:.2f})">{y_label}</text>')
    for idx, (label, pts) in enumerate(series):
        color = SVG_COLORS[idx % len(SVG_COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = mt + 16 + 16 * idx
        parts.append(f'<line x1="{width - mr - 90:.2f}" y1="{ly:.2f}" '
                     f'x2="{width - mr - 70:.2f}" y2="{ly:.2f}" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - mr - 64:.2f}" y="{ly + 4:.2f}" '
                     f'font-size="12">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plot(data, path, k_values: Optional[Sequence[int]] = None) -> None:
    """Deterministic SVG of ln ||E_i||_k vs i, one polyline per k.

    Accepts an IterationTrace (data polylines over the usable steps) or a
    sequence of DecayFits (the fitted lines over their step ranges).
    """
    series = []
    if isinstance(data, iteration.IterationTrace):
        usable = data.usable_steps()
        if not usable:
            raise verify.InsufficientSteps("no steps above the noise floor to plot")
        if k_values is None:
            k_values = range(min(2, len(data.states[1].norms_error) - 1) + 1)
        for k in k_values:
            pts = [(float(s.step), math.log(s.norms_error[k]))
                   for s in data.states
                   if s.step in usable and k < len(s.norms_error)
                   and s.norms_error[k] > 0.0]
            if pts:
                series.append((f"k={k}", pts))
    else:
        for fit in data:
            lo, hi = fit.steps_used
            series.append((f"k={fit.k}", [
                (float(lo), fit.intercept + fit.slope * lo),
                (float(hi), fit.intercept + fit.slope * hi)]))
    if not series:
        raise verify.InsufficientSteps("no positive norms to plot")
    _atomic_write(Path(path), _svg_chart(series, "step i", "ln ||E_i||_k"))


def _write_trace(trace: iteration.IterationTrace, out: Path, stem: str,
                 plot: bool) -> None:
    _write_csv_via(iteration.trace_to_csv, trace, out / f"{stem}.csv")
    if plot:
        emit_plot(trace, out / f"{stem}.svg")


def _cmd_run(cfg: ExperimentConfig, out: Path) -> int:
    instance = cfg.problem.build()
    trace = iteration.run(instance)
    _write_trace(trace, out, "trace", cfg.plot)
    print(f"run: {trace.n_steps} steps, flag={trace.flag}, "
          f"max identity residual {max(trace.identity_residuals):.3e}")
    print(f"wrote {out / 'trace.csv'}")
    if trace.flag == "diverged":
        print(f"numerical failure: escape from the inverse's domain at step "
              f"{trace.escape_step} (lambda*ell={cfg.problem.params().lambda_ell:g}, "
              f"threshold={trace.threshold:g})", file=sys.stderr)
        return 2
    return 0


def _decay_fits(trace: iteration.IterationTrace) -> list[verify.DecayFit]:
    k_top = min(2, len(trace.states[1].norms_error) - 1)
    return [verify.fit_decay(trace, k) for k in range(k_top + 1)]


def _cmd_decay(cfg: ExperimentConfig, out: Path) -> int:
    instance = cfg.problem.build()
    trace = iteration.run(instance)
    if trace.flag == "diverged":
        print(f"numerical failure: escape at step {trace.escape_step}",
              file=sys.stderr)
        return 2
    fits = _decay_fits(trace)
    _write_csv_via(verify.decay_fits_to_csv, fits, out / "decay.csv")
    _write_trace(trace, out, "trace", cfg.plot)
    ll = cfg.problem.params().lambda_ell
    for fit in fits:
        print(f"k={fit.k}: slope={fit.slope:+.4f} (-ln(lambda*ell)={-math.log(ll):+.4f}), "
              f"r^2={fit.r_squared:.4f}, steps {fit.steps_used[0]}..{fit.steps_used[1]}")
    print(f"wrote {out / 'decay.csv'}")
    return 0


def _write_csv_via(writer, payload, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        writer(payload, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cmd_remainder_audit(cfg: ExperimentConfig, out: Path) -> int:
    from .problem import stock_remainder_terms
    params = cfg.problem.params()
    seed = cfg.problem.seed
    reports = [verify.verify_remainder_class(term, term.bound_class, params, seed=seed)
               for term in stock_remainder_terms()]
    control = verify.misdeclared_control(params, seed=seed)
    _write_csv_via(verify.bound_report_to_csv, reports + [control], out / "audit.csv")
    for report in reports:
        print(f"class {report.bound_class.kind}: constants "
              f"{', '.join(f'{c:.3f}' for c in report.per_k_constants)} "
              f"stable={report.stable}")
    print(f"control (self-interaction audited as R2): stable={control.stable}")
    print(f"wrote {out / 'audit.csv'}")
    return 0


def _cmd_ledger(cfg: ExperimentConfig, out: Path, write_csv: bool) -> int:
    params = cfg.problem.params()
    cs = ledger.ConstantSet(
        c=cfg.ledger_c, c_err=cfg.ledger_c_err, c_r=cfg.ledger_c_r,
        c_f=params.c_f,
        c_k=tuple(ledger.safe_leibniz(k) for k in range(params.k0 + 1)),
        step=1)
    rows = ledger.constant_table(cs, params, cfg.problem.n_steps)
    print(f"threshold {ledger.threshold(cs):g}")
    header = f"{'step':>4} {'C':>12} {'C_err':>12} {'C_r':>12} {'C_diff':>12} {'threshold':>12}"
    print(header)
    for row in rows:
        print(f"{row['step']:>4} {row['C']:>12.5g} {row['C_err']:>12.5g} "
              f"{row['C_r']:>12.5g} {row['C_diff']:>12.5g} {row['threshold']:>12.5g}")
    if write_csv:
        lines = ["step,C,C_err,C_r,C_diff,threshold"]
        for row in rows:
            lines.append(f"{row['step']},{row['C']:.17g},{row['C_err']:.17g},"
                         f"{row['C_r']:.17g},{row['C_diff']:.17g},"
                         f"{row['threshold']:.17g}")
        _atomic_write(out / "ledger.csv", "\n".join(lines) + "\n")
        print(f"wrote {out / 'ledger.csv'}")
    return 0


def _cmd_r5_demo(cfg: ExperimentConfig, out: Path) -> int:
    params = cfg.problem.params()
    strength = cfg.problem.r5_strength if cfg.problem.r5_strength > 0 else 1.0
    report = verify.demonstrate_r5_failure(params, strength, cfg.problem.amplitude)
    _write_csv_via(verify.decay_fits_to_csv, [report.fit_clean], out / "r5_clean.csv")
    _write_csv_via(verify.decay_fits_to_csv, [report.fit_r5], out / "r5_with.csv")
    if report.no_effect:
        print("no effect: the two runs are identical (strength 0?)")
    else:
        print(f"clean slope {report.fit_clean.slope:+.4f}, "
              f"self-interaction slope {report.fit_r5.slope:+.4f}, "
              f"ratio {report.slope_ratio:.3f}, stalled={report.stalled()}")
    print(f"wrote {out / 'r5_clean.csv'} and {out / 'r5_with.csv'}")
    return 0


def _cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    values = cfg.lambda_ell or (64.0, 128.0, 256.0)
    base = cfg.problem
    code = 0
    for ll in values:
        ell = ll / base.lam
        problem = ProblemConfig.from_mapping({
            "kind": base.kind, "lambda": str(base.lam), "ell": repr(ell),
            "k0": str(base.k0), "k1": str(base.k1), "C_F": repr(base.c_f),
            "amplitude": repr(base.amplitude), "drift": repr(base.drift),
            "r5_strength": repr(base.r5_strength), "n_points": str(base.n_points),
            "n_steps": str(base.n_steps), "seed": str(base.seed)})
        try:
            problem.params().validate()
        except ValueError as exc:
            raise ConfigError(f"lambda_ell={ll:g}: {exc}") from exc
        trace = iteration.run(problem.build())
        if trace.flag == "diverged":
            print(f"lambda_ell={ll:g}: diverged at step {trace.escape_step}",
                  file=sys.stderr)
            code = 2
            continue
        fits = _decay_fits(trace)
        stem = f"decay_ll{ll:g}"
        _write_csv_via(verify.decay_fits_to_csv, fits, out / f"{stem}.csv")
        if cfg.plot:
            emit_plot(trace, out / f"{stem}.svg")
        print(f"lambda_ell={ll:g}: slope k=0 {fits[0].slope:+.4f} "
              f"(-ln={-math.log(ll):+.4f}), wrote {out / (stem + '.csv')}")
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tamelab",
        description="Experiment runner for the corrector-iteration laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--output_dir", default=None,
                       help="output directory (default ./out or config value)")
        p.add_argument("--plot", action="store_true", help="emit SVG charts")
        if name == "ledger":
            p.add_argument("--csv", action="store_true",
                           help="also write the table as CSV")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_experiment_config(args.config, args.overrides)
        if cfg.experiment is not None and cfg.experiment != args.command:
            raise ConfigError(
                f"config names experiment {cfg.experiment!r} but subcommand "
                f"is {args.command!r}")
        replacements = {}
        if args.output_dir is not None:
            replacements["output_dir"] = args.output_dir
        if args.plot:
            replacements["plot"] = True
        if replacements:
            cfg = replace(cfg, **replacements)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(cfg.output_dir)
    try:
        if args.command == "run":
            return _cmd_run(cfg, out)
        if args.command == "decay":
            return _cmd_decay(cfg, out)
        if args.command == "remainder-audit":
            return _cmd_remainder_audit(cfg, out)
        if args.command == "ledger":
            return _cmd_ledger(cfg, out, args.csv)
        if args.command == "r5-demo":
            return _cmd_r5_demo(cfg, out)
        if args.command == "sweep":
            return _cmd_sweep(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (iteration.DomainEscape, verify.InsufficientSteps,
            iteration.DerivativeBudgetExhausted) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())

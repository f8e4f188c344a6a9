"""Command-line interface: ``kernelgc {simulate,fit,gctest,diagnose,montecarlo}``.

Exit codes: 0 success, 1 usage or parameter error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .diagnostics import diagnose_model, order_scan_kernels
from .errors import DataError, KernelGCError, NumericalError, ParameterError
from .inference import gc_test_all_pairs
from .io import SCHEMA_VERSION, read_panel_csv, write_json, write_panel_csv, write_rows_csv
from .kernels import estimate_lagged_kernels, kcf_matrices, parse_kernel
from .kvar import default_diag_lags, fit_kernels
from .montecarlo import ExperimentConfig, run_experiment
from .simulate import SimulationConfig, get_system, load_system, simulate_replication

logger = logging.getLogger("kernelgc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _output_dir(value):
    return Path(value or os.environ.get("KERNELGC_OUTPUT_DIR", "."))


# --- simulate -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = load_system(args.system_file) if args.system_file else get_system(args.system)
    cfg = SimulationConfig(args.ns, args.seed, args.replication, args.burn_in)
    panel, attempts = simulate_replication(spec, cfg)
    path = Path(args.output) if args.output else (
        _output_dir(args.output_dir) / f"{spec.name}_ns{args.ns}_seed{args.seed}_rep{args.replication}.csv"
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    write_panel_csv(panel, path)
    print(f"system={spec.name} n_s={args.ns} seed={args.seed} replication={args.replication} "
          f"burn_in={args.burn_in} attempts={attempts} -> {path}")
    return EXIT_OK


# --- fit / gctest / diagnose ---------------------------------------------------

def _fit_from_args(args):
    panel = read_panel_csv(args.panel)
    kernel = parse_kernel(args.kernel)
    n, D = panel.values.shape
    scan = None
    if args.order == "auto":
        p_max = min(args.p_max, max(1, (n - 1) // D - 1))
        if p_max < args.p_max:
            logger.info("p_max reduced to %d for n_s=%d, D=%d", p_max, n, D)
        scan_kset = estimate_lagged_kernels(panel, kernel, p_max)
        scan = order_scan_kernels(scan_kset, p_max, args.criterion, args.solver)
        p = scan.selected
    else:
        try:
            p = int(args.order)
        except ValueError:
            raise ParameterError(f"--order must be 'auto' or an integer, got {args.order!r}") from None
        if p < 1 or n <= p * D:
            raise ParameterError(f"order {p} needs 1 <= p and n_s > p*D")
    L = args.lags if args.lags is not None else default_diag_lags(n)
    if L < 1 or L + p >= n:
        raise ParameterError(f"diagnostic lags must satisfy 1 <= L and L + p < n_s (L={L}, p={p}, n_s={n})")
    kset = estimate_lagged_kernels(panel, kernel, L + p)
    model = fit_kernels(kset, p, args.solver)
    return panel, model, scan, L


def _matrix(m):
    return [[float(v) for v in row] for row in m]


def _model_report(args, model, scan, L) -> dict:
    names = model.channel_names
    D = model.n_channels
    entries = [
        {"target": names[i], "source": names[j], "lag": k + 1, "value": float(model.coeffs[k][i, j])}
        for k in range(model.order) for i in range(D) for j in range(D)
    ]
    report = {
        "input": str(args.panel),
        "kernel": str(model.kernel),
        "solver": model.solver,
        "n_s": model.sample_count,
        "channels": list(names),
        "order": model.order,
        "order_selection": None if scan is None else {
            "criterion": scan.flavor,
            "penalty": scan.penalty,
            "selected": scan.selected,
            "table": scan.as_rows(),
        },
        "coefficients": {"blocks": [_matrix(a) for a in model.coeffs], "entries": entries},
        "sigma_w": _matrix(model.sigma_w),
        "gamma": _matrix(model.gamma),
        "yw_identity_residual": model.yw_residual,
        "notes": list(model.notes),
    }
    w = diagnose_model(model, args.alpha, L)
    report["whiteness"] = {
        "alpha": w.alpha,
        "max_lag": w.max_lag,
        "threshold": w.threshold,
        "fraction_inside": w.fraction_inside,
        "portmanteau": {"statistic": w.q_statistic, "dof": w.dof, "p_value": w.p_value,
                        "reject": w.reject},
    }
    return report


def _emit_json(obj, output):
    if output:
        write_json(obj, output)
    else:
        json.dump({"schema_version": SCHEMA_VERSION, **obj}, sys.stdout, indent=2)
        sys.stdout.write("\n")


def cmd_fit(args) -> int:
    _, model, scan, L = _fit_from_args(args)
    _emit_json(_model_report(args, model, scan, L), args.output)
    return EXIT_OK


def cmd_gctest(args) -> int:
    if not 0.0 < args.alpha <= 1.0:
        raise ParameterError("--alpha must lie in (0, 1]")
    panel = read_panel_csv(args.panel)
    if panel.n_channels < 2:
        raise ParameterError("gctest needs at least two channels: no pairs to test")
    _, model, scan, _ = _fit_from_args(args)
    results = gc_test_all_pairs(model, args.alpha)
    _emit_json({
        "input": str(args.panel),
        "kernel": str(model.kernel),
        "solver": model.solver,
        "order": model.order,
        "n_s": model.sample_count,
        "alpha": args.alpha,
        "tests": [r.as_dict() for r in results],
    }, args.output)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    panel = read_panel_csv(args.panel)
    n = panel.n_samples
    if args.lags is not None and args.lags >= n:
        raise ParameterError(f"--lags must be < n_s={n}, got {args.lags}")
    _, model, _, L = _fit_from_args(args)
    out = _output_dir(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = model.channel_names
    D = model.n_channels
    report = diagnose_model(model, args.alpha, L)
    thr = report.threshold
    raw = kcf_matrices(model.kset.truncated(L))
    rows = []
    for t, tau in enumerate(range(-L, L + 1)):
        for i in range(D):
            for j in range(D):
                rows.append({"tau": tau, "row": names[i], "col": names[j],
                             "kcf": float(raw[t, i, j]), "lower": -thr, "upper": thr})
    write_rows_csv(rows, out / "kcf.csv")
    rrows = [{**r, "lower": -thr, "upper": thr} for r in report.rows(list(names))]
    write_rows_csv(rrows, out / "residual_kcf.csv",
                   ["tau", "row", "col", "value", "flag", "lower", "upper"])
    print(f"order={model.order} L={L} threshold={thr:.6g} inside={report.fraction_inside:.4f} "
          f"portmanteau Q={report.q_statistic:.4g} dof={report.dof} p={report.p_value:.4g} -> {out}")
    return EXIT_OK


# --- montecarlo ---------------------------------------------------------------

_MC_KEYS = {
    "system": str, "system_file": str, "kernel": str, "solver": str, "order": str,
    "p_max": int, "criterion": str, "alpha": float, "replications": int, "seed": int,
    "burn_in": int, "max_attempts": int, "workers": int,
}


def load_experiment_config(path) -> dict:
    """Read a flat YAML mapping whose keys mirror the montecarlo flags."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise DataError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise DataError(f"config {path} must be a key-value mapping")
    allowed = set(_MC_KEYS) | {"lengths", "output_dir", "system_params"}
    unknown = set(data) - allowed
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    return data


def cmd_montecarlo(args) -> int:
    settings = load_experiment_config(args.config) if args.config else {}
    for key in list(_MC_KEYS) + ["lengths", "output_dir"]:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if isinstance(settings.get("lengths"), str):
        settings["lengths"] = [int(v) for v in settings["lengths"].split(",")]
    if "order" in settings:
        settings["order"] = str(settings["order"])
    out = _output_dir(settings.pop("output_dir", None))
    cfg = ExperimentConfig(**settings)
    result = run_experiment(cfg, out)
    for r in result.rates:
        print(f"{r.target}<-{r.source} [{r.label}] n_s={r.n_s:5d} rate={r.rate:.4f} "
              f"({r.rejections}/{r.count}) 95% CI [{r.wilson_low:.4f}, {r.wilson_high:.4f}]")
    print(f"outputs written to {out}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def _add_fit_flags(p):
    p.add_argument("panel", help="panel CSV (header of channel names)")
    p.add_argument("--kernel", default="poly:0:2", help="poly:<offset>:<degree> (default poly:0:2)")
    p.add_argument("--order", default="auto", help="model order or 'auto' (default auto)")
    p.add_argument("--criterion", default="hq", choices=["hq", "aic"])
    p.add_argument("--p-max", dest="p_max", type=int, default=8)
    p.add_argument("--solver", default="tls", choices=["tls", "ls"])
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--lags", type=int, default=None, help="diagnostic lag depth L")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kernelgc", description="Kernel Granger causality toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a benchmark or custom system to CSV")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--system", default="example1")
    g.add_argument("--system-file", dest="system_file")
    p.add_argument("--ns", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replication", type=int, default=0)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=10_000)
    p.add_argument("--output", "-o")
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a kernel VAR and report coefficients and diagnostics")
    _add_fit_flags(p)
    p.add_argument("--output", "-o", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gctest", help="Wald tests for every ordered channel pair")
    _add_fit_flags(p)
    p.add_argument("--output", "-o", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_gctest)

    p = sub.add_parser("diagnose", help="write KCF and residual KCF tables")
    _add_fit_flags(p)
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("montecarlo", help="detection-rate experiment over replications and lengths")
    p.add_argument("--config", help="flat YAML file; flags override its values")
    p.add_argument("--system")
    p.add_argument("--system-file", dest="system_file")
    p.add_argument("--kernel")
    p.add_argument("--solver", choices=["tls", "ls"])
    p.add_argument("--order", help="'true', 'auto' or an integer")
    p.add_argument("--p-max", dest="p_max", type=int)
    p.add_argument("--criterion", choices=["hq", "aic"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--lengths", help="comma-separated record lengths")
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--max-attempts", dest="max_attempts", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"kernelgc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"kernelgc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, KernelGCError) as exc:
        print(f"kernelgc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

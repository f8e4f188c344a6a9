"""Monte Carlo detection-rate experiments over replications and record lengths."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .diagnostics import order_scan_kernels
from .errors import KernelGCError, ParameterError
from .inference import filliben_coefficient, gc_test_all_pairs, vec_coeffs
from .io import write_json, write_rows_csv
from .kernels import KernelSpec, estimate_lagged_kernels, parse_kernel
from .kvar import fit_kernels
from .simulate import SimulationConfig, SystemSpec, get_system, load_system, simulate_replication

logger = logging.getLogger(__name__)

__all__ = ["ExperimentConfig", "ExperimentResult", "RateRow", "run_experiment", "wilson_interval"]

DEFAULT_LENGTHS = (32, 64, 128, 256, 512, 1024, 2048)


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "example1"
    system_file: str | None = None
    system_params: dict = field(default_factory=dict)
    kernel: str = "poly:0:2"
    solver: str = "tls"
    order: str = "true"
    p_max: int = 8
    criterion: str = "hq"
    alpha: float = 0.01
    lengths: tuple = DEFAULT_LENGTHS
    replications: int = 1000
    seed: int = 0
    burn_in: int = 10_000
    max_attempts: int = 10
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(int(n) for n in self.lengths))
        if self.replications < 1:
            raise ParameterError("replications must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError("alpha must lie in (0, 1)")
        if not self.lengths or list(self.lengths) != sorted(self.lengths) or self.lengths[0] < 2:
            raise ParameterError("lengths must be ascending and >= 2")
        if str(self.order) not in ("true", "auto") and not str(self.order).isdigit():
            raise ParameterError(f"order must be 'true', 'auto' or an integer, got {self.order!r}")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")
        self.kernel_spec  # validates
        self.system_spec

    @property
    def kernel_spec(self) -> KernelSpec:
        return parse_kernel(self.kernel)

    @property
    def system_spec(self) -> SystemSpec:
        if self.system_file:
            return load_system(self.system_file)
        return get_system(self.system, **self.system_params)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lengths"] = list(self.lengths)
        d.pop("workers")
        return d


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass(frozen=True)
class RateRow:
    target: str
    source: str
    n_s: int
    label: str
    rejections: int
    count: int
    rate: float
    wilson_low: float
    wilson_high: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    rates: list

    def rate(self, target: int, source: int, n_s: int) -> RateRow:
        names = self.config.system_spec.channel_names
        for r in self.rates:
            if r.target == names[target] and r.source == names[source] and r.n_s == n_s:
                return r
        raise KeyError((target, source, n_s))

    def coefficient_samples(self, n_s: int, target: int, source: int, lag: int = 1) -> np.ndarray:
        D = self.config.system_spec.dimension
        idx = (lag - 1) * D * D + source * D + target
        return np.array(
            [r["coeffs"][idx] for r in self.records
             if r["n_s"] == n_s and r["status"] == "ok" and idx < len(r["coeffs"])]
        )

    def selected_orders(self, n_s: int) -> list[int]:
        return [r["order"] for r in self.records if r["n_s"] == n_s and r["status"] == "ok"]


def _replication(args) -> dict:
    cfg, spec, n_s, rep = args
    record = {"n_s": n_s, "replication": rep, "attempts": 0, "status": "ok", "order": 0,
              "tests": [], "coeffs": []}
    try:
        panel, attempts = simulate_replication(
            spec, SimulationConfig(n_s, cfg.seed, rep, cfg.burn_in), cfg.max_attempts
        )
        record["attempts"] = attempts
        kernel = cfg.kernel_spec
        if cfg.order == "auto":
            p_max = min(cfg.p_max, (n_s - 1) // spec.dimension - 1)
            kset = estimate_lagged_kernels(panel, kernel, p_max)
            p = order_scan_kernels(kset, p_max, cfg.criterion, cfg.solver).selected
        else:
            p = spec.model_order if cfg.order == "true" else int(cfg.order)
            kset = estimate_lagged_kernels(panel, kernel, p)
        model = fit_kernels(kset.truncated(p) if kset.max_lag > p else kset, p, cfg.solver)
        record["order"] = p
        record["coeffs"] = [float(v) for v in vec_coeffs(model)]
        record["tests"] = [
            (t.target, t.source, t.statistic, t.p_value, t.reject)
            for t in gc_test_all_pairs(model, cfg.alpha)
        ]
    except KernelGCError as exc:
        record["status"] = f"failed: {type(exc).__name__}: {exc}"
        logger.info("n_s=%d replication %d failed: %s", n_s, rep, exc)
    return record


def _aggregate(cfg: ExperimentConfig, spec: SystemSpec, records: list) -> list[RateRow]:
    names = spec.channel_names
    D = spec.dimension
    truth = spec.causal_pairs
    rows = []
    for i in range(D):
        for j in range(D):
            if i == j:
                continue
            for n_s in cfg.lengths:
                rej = cnt = 0
                for r in records:
                    if r["n_s"] != n_s or r["status"] != "ok":
                        continue
                    for t, s, _, _, reject in r["tests"]:
                        if t == i and s == j:
                            cnt += 1
                            rej += bool(reject)
                lo, hi = wilson_interval(rej, cnt)
                rows.append(RateRow(names[i], names[j], n_s, "TP" if (i, j) in truth else "FP",
                                    rej, cnt, rej / cnt if cnt else float("nan"), lo, hi))
    return rows


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> ExperimentResult:
    """Run every (length, replication) cell and optionally write the result files.

    Records are ordered by (length, replication) regardless of ``workers``,
    so outputs are identical for any pool size.
    """
    spec = cfg.system_spec
    tasks = [(cfg, spec, n_s, rep) for n_s in cfg.lengths for rep in range(cfg.replications)]
    if cfg.workers == 1:
        records = [_replication(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_replication, tasks, chunksize=max(1, len(tasks) // (8 * cfg.workers))))
    records.sort(key=lambda r: (r["n_s"], r["replication"]))
    result = ExperimentResult(cfg, records, _aggregate(cfg, spec, records))
    if output_dir is not None:
        write_outputs(result, output_dir)
    return result


def _coef_names(D: int, p: int, names) -> list[str]:
    return [f"a[{names[r]}<-{names[c]}]({k})" for k in range(1, p + 1)
            for c in range(D) for r in range(D)]


def write_outputs(result: ExperimentResult, output_dir) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg, spec = result.config, result.config.system_spec
    names, D = spec.channel_names, spec.dimension

    write_rows_csv([asdict(r) for r in result.rates], out / "rates.csv",
                   list(RateRow.__dataclass_fields__))

    log_rows = []
    for r in result.records:
        base = {"n_s": r["n_s"], "replication": r["replication"], "attempts": r["attempts"],
                "status": r["status"], "order": r["order"]}
        if not r["tests"]:
            log_rows.append(base)
        for t, s, stat, pval, rej in r["tests"]:
            log_rows.append({**base, "target": names[t], "source": names[s],
                             "statistic": stat, "p_value": pval, "reject": rej})
    write_rows_csv(log_rows, out / "replications.csv",
                   ["n_s", "replication", "attempts", "status", "order",
                    "target", "source", "statistic", "p_value", "reject"])

    p_top = max([r["order"] for r in result.records] + [1])
    coef_cols = _coef_names(D, p_top, names)
    coef_rows = []
    for r in result.records:
        if r["status"] != "ok":
            continue
        row = {"n_s": r["n_s"], "replication": r["replication"], "order": r["order"]}
        row.update(zip(coef_cols, r["coeffs"]))
        coef_rows.append(row)
    write_rows_csv(coef_rows, out / "coefficients.csv", ["n_s", "replication", "order"] + coef_cols)

    fill_rows = []
    for n_s in cfg.lengths:
        for idx, name in enumerate(coef_cols):
            k = idx // (D * D) + 1
            target, source = idx % D, (idx // D) % D
            x = result.coefficient_samples(n_s, target, source, k)
            r2 = float("nan")
            if x.size >= 3 and np.ptp(x) > 0:
                r2 = filliben_coefficient(x)
            fill_rows.append({"n_s": n_s, "coefficient": name, "samples": int(x.size), "filliben_r2": r2})
    write_rows_csv(fill_rows, out / "filliben.csv")

    order_rows = []
    for n_s in cfg.lengths:
        sel = result.selected_orders(n_s)
        for k in sorted(set(sel)):
            order_rows.append({"n_s": n_s, "order": k, "count": sel.count(k)})
    write_rows_csv(order_rows, out / "orders.csv", ["n_s", "order", "count"])

    per_length = []
    for n_s in cfg.lengths:
        recs = [r for r in result.records if r["n_s"] == n_s]
        per_length.append({
            "n_s": n_s,
            "replications": len(recs),
            "effective": sum(r["status"] == "ok" for r in recs),
            "failed": sum(r["status"] != "ok" for r in recs),
            "resampled": sum(max(r["attempts"] - 1, 0) for r in recs),
        })
    write_json({
        "config": cfg.as_dict(),
        "system": spec.as_dict(),
        "true_graph": [{"target": names[t], "source": names[s], "lag": k}
                       for t, s, k in sorted(spec.true_graph)],
        "lengths": per_length,
        "rates": [asdict(r) for r in result.rates],
    }, out / "summary.json")


def default_output_dir() -> str:
    return os.environ.get("KERNELGC_OUTPUT_DIR", ".")

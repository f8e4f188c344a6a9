"""Seeded simulation of nonlinearly coupled autoregressive benchmark systems.

A system is a table of additive terms.  Each term adds
``coef * f(x_source(n - lag))`` to channel ``target`` where ``f`` is either a
power ``v ** k`` or the bounded map ``v (1 - v^2) exp(-v^2)``.  Every channel
also receives its own standard normal innovation.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, ParameterError
from .kernels import TimeSeriesPanel

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

logger = logging.getLogger(__name__)

__all__ = [
    "Term",
    "SystemSpec",
    "SimulationConfig",
    "builtin_systems",
    "get_system",
    "system_from_dict",
    "load_system",
    "child_seed",
    "innovations",
    "simulate",
    "simulate_replication",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e8
KINDS = {"power": 0, "bump": 1}


@dataclass(frozen=True)
class Term:
    target: int
    source: int
    lag: int
    coef: float
    kind: str = "power"
    power: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown term kind {self.kind!r}; expected one of {sorted(KINDS)}")
        if int(self.lag) != self.lag or self.lag < 1:
            raise ParameterError(f"term lag must be a positive integer, got {self.lag!r}")
        if int(self.power) != self.power or self.power < 1:
            raise ParameterError(f"term power must be a positive integer, got {self.power!r}")
        if not math.isfinite(self.coef):
            raise ParameterError("term coefficient must be finite")


@dataclass(frozen=True)
class SystemSpec:
    name: str
    dimension: int
    terms: tuple
    parameters: dict = field(default_factory=dict)
    nominal_order: int = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise ParameterError("system dimension must be >= 1")
        for t in self.terms:
            for ch in (t.target, t.source):
                if not 0 <= ch < self.dimension:
                    raise ParameterError(f"term {t} references channel outside 0..{self.dimension - 1}")
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def true_graph(self) -> frozenset:
        """Directed edges ``(target, source, lag)`` between distinct channels."""
        return frozenset(
            (t.target, t.source, t.lag) for t in self.terms if t.source != t.target and t.coef != 0
        )

    @property
    def causal_pairs(self) -> frozenset:
        return frozenset((t, s) for t, s, _ in self.true_graph)

    @property
    def max_lag(self) -> int:
        return max((t.lag for t in self.terms), default=1)

    @property
    def model_order(self) -> int:
        """Order used when fitting at the "true" order (defaults to the largest lag)."""
        return self.nominal_order or self.max_lag

    @property
    def channel_names(self) -> tuple:
        return tuple(f"x{i + 1}" for i in range(self.dimension))

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "parameters": dict(self.parameters),
            "order": self.model_order,
            "terms": [
                {"target": t.target, "source": t.source, "lag": t.lag, "coef": t.coef,
                 "kind": t.kind, "power": t.power}
                for t in self.terms
            ],
        }


def _bump(target, source, lag, coef=3.4):
    return Term(target, source, lag, coef, "bump")


def example1(a=0.2, b=0.6, c=0.7) -> SystemSpec:
    """Quadratic coupling x2 -> x1 on top of two AR(1) processes."""
    if not (abs(a) < 1 and abs(b) < 1):
        raise ParameterError("example1 needs |a| < 1 and |b| < 1")
    terms = (
        Term(0, 0, 1, a),
        Term(0, 1, 1, c, power=2),
        Term(1, 1, 1, b),
    )
    return SystemSpec("example1", 2, terms, {"a": a, "b": b, "c": c})


def example2(R=0.99, f=0.1, c=0.1) -> SystemSpec:
    """Resonant oscillator x1 driving a low-pass x2 through a squared term."""
    if not (0 < R < 1 and 0 < f < 0.5):
        raise ParameterError("example2 needs 0 < R < 1 and 0 < f < 0.5")
    terms = (
        Term(0, 0, 1, 2 * R * math.cos(2 * math.pi * f)),
        Term(0, 0, 2, -R * R),
        Term(1, 1, 1, -0.9),
        Term(1, 0, 1, c, power=2),
    )
    return SystemSpec("example2", 2, terms, {"R": R, "f": f, "c": c})


def example3(c1=0.7, c2=0.9) -> SystemSpec:
    terms = (
        _bump(0, 0, 1),
        _bump(1, 1, 1),
        Term(1, 0, 1, c1, power=2),
        _bump(2, 2, 1),
        Term(2, 1, 1, c2, power=4),
    )
    return SystemSpec("example3", 3, terms, {"c1": c1, "c2": c2})


def example4(c=0.5) -> SystemSpec:
    terms = (
        _bump(0, 0, 1),
        Term(0, 0, 2, 0.8),
        _bump(1, 1, 1),
        Term(1, 1, 2, 0.5),
        Term(1, 0, 2, c, power=2),
    )
    return SystemSpec("example4", 2, terms, {"c": c})


def example5(c1=0.9, c2=0.4) -> SystemSpec:
    terms = (
        _bump(0, 0, 3),
        Term(0, 0, 4, 0.4),
        _bump(1, 1, 1),
        Term(1, 0, 2, c1, power=2),
        _bump(2, 2, 2),
        Term(2, 1, 3, c2, power=2),
    )
    # fitted at order 3 even though a self term reaches lag 4
    return SystemSpec("example5", 3, terms, {"c1": c1, "c2": c2}, nominal_order=3)


_BUILDERS = {
    "example1": example1,
    "example2": example2,
    "example3": example3,
    "example4": example4,
    "example5": example5,
}


def builtin_systems() -> dict:
    """The five benchmark systems with their default parameters."""
    return {name: build() for name, build in _BUILDERS.items()}


def get_system(name: str, **params) -> SystemSpec:
    try:
        build = _BUILDERS[name.lower()]
    except KeyError:
        raise ParameterError(f"unknown system {name!r}; choose from {sorted(_BUILDERS)}") from None
    try:
        return build(**params)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {name}: {exc}") from None


def system_from_dict(d: dict) -> SystemSpec:
    try:
        if "builtin" in d:
            return get_system(d["builtin"], **d.get("parameters", {}))
        terms = tuple(
            Term(
                int(t["target"]), int(t["source"]), int(t["lag"]), float(t["coef"]),
                t.get("kind", "power"), int(t.get("power", 1)),
            )
            for t in d["terms"]
        )
        return SystemSpec(str(d.get("name", "custom")), int(d["dimension"]), terms,
                          dict(d.get("parameters", {})), int(d.get("order", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"invalid system description: {exc!r}") from None


def load_system(path) -> SystemSpec:
    """Read a custom system from JSON (see :meth:`SystemSpec.as_dict`)."""
    with open(Path(path), encoding="utf-8") as fh:
        return system_from_dict(json.load(fh))


@dataclass(frozen=True)
class SimulationConfig:
    n_s: int
    seed: int = 0
    replication_index: int = 0
    burn_in: int = 10_000

    def __post_init__(self):
        if self.n_s < 1:
            raise ParameterError("n_s must be >= 1")
        if self.burn_in < 0:
            raise ParameterError("burn_in must be >= 0")
        if self.seed < 0 or self.replication_index < 0:
            raise ParameterError("seed and replication_index must be non-negative")


def child_seed(seed: int, replication_index: int, attempt: int = 0) -> np.random.SeedSequence:
    """Hash-mixed seed for one replication; independent of execution order."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication_index), int(attempt)))


def innovations(spec: SystemSpec, cfg: SimulationConfig, attempt: int = 0) -> np.ndarray:
    """Standard normal innovations, shape ``(burn_in + n_s, D)``."""
    rng = np.random.default_rng(child_seed(cfg.seed, cfg.replication_index, attempt))
    return rng.standard_normal((cfg.burn_in + cfg.n_s, spec.dimension))


@njit(cache=True)
def _run(w, targets, sources, lags, kinds, powers, coefs, limit):
    n, D = w.shape
    x = np.zeros((n, D))
    for t in range(n):
        for ch in range(D):
            x[t, ch] = w[t, ch]
        for m in range(targets.shape[0]):
            s = t - lags[m]
            if s < 0:
                continue
            v = x[s, sources[m]]
            if kinds[m] == 0:
                x[t, targets[m]] += coefs[m] * v ** powers[m]
            else:
                v2 = v * v
                x[t, targets[m]] += coefs[m] * v * (1.0 - v2) * math.exp(-v2)
        for ch in range(D):
            if not abs(x[t, ch]) <= limit:
                return x, t
    return x, -1


def _term_arrays(spec: SystemSpec):
    terms = spec.terms
    return (
        np.array([t.target for t in terms], dtype=np.int64),
        np.array([t.source for t in terms], dtype=np.int64),
        np.array([t.lag for t in terms], dtype=np.int64),
        np.array([KINDS[t.kind] for t in terms], dtype=np.int64),
        np.array([t.power for t in terms], dtype=np.int64),
        np.array([t.coef for t in terms], dtype=np.float64),
    )


def simulate(
    spec: SystemSpec,
    cfg: SimulationConfig,
    innovations_override: np.ndarray | None = None,
    attempt: int = 0,
) -> TimeSeriesPanel:
    """Run the system from a zero initial state and drop the burn-in.

    Raises
    ------
    DivergenceError
        If any sample exceeds ``DIVERGENCE_LIMIT`` in magnitude; the index is
        counted from the start of the burn-in.
    """
    if innovations_override is None:
        w = innovations(spec, cfg, attempt)
    else:
        w = np.ascontiguousarray(innovations_override, dtype=float)
        if w.shape != (cfg.burn_in + cfg.n_s, spec.dimension):
            raise ParameterError(
                f"innovations must have shape {(cfg.burn_in + cfg.n_s, spec.dimension)}, got {w.shape}"
            )
    x, bad = _run(w, *_term_arrays(spec), DIVERGENCE_LIMIT)
    if bad >= 0:
        raise DivergenceError(bad, np.max(np.abs(x[bad])))
    return TimeSeriesPanel(x[cfg.burn_in :], spec.channel_names)


def simulate_replication(spec: SystemSpec, cfg: SimulationConfig, max_attempts: int = 10):
    """Simulate, resampling with a fresh child seed after each divergence.

    Returns ``(panel, attempts_used)``; re-raises the last divergence when
    ``max_attempts`` are exhausted.
    """
    for attempt in range(max_attempts):
        try:
            return simulate(spec, cfg, attempt=attempt), attempt + 1
        except DivergenceError as exc:
            logger.info("replication %d diverged (attempt %d): %s", cfg.replication_index, attempt, exc)
            last = exc
    raise last

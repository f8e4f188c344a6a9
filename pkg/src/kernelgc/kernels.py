"""Polynomial Mercer kernels and lagged kernel moment estimation.

Every quantity in the package is computed from kernel evaluations
``kappa(x, y)`` between scalar samples; feature vectors are never formed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateChannelError, KernelOverflowError, ParameterError

__all__ = [
    "KernelSpec",
    "TimeSeriesPanel",
    "LaggedKernelSet",
    "kernel_eval",
    "parse_kernel",
    "gram_matrix",
    "estimate_lagged_kernels",
    "kcf",
    "kcf_matrices",
]


@dataclass(frozen=True)
class KernelSpec:
    """Polynomial kernel ``(offset + x*y) ** degree``."""

    offset: float = 0.0
    degree: int = 2

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ParameterError(f"kernel degree must be a positive integer, got {self.degree!r}")
        if not np.isfinite(self.offset) or self.offset < 0:
            raise ParameterError(f"kernel offset must be finite and >= 0, got {self.offset!r}")
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "offset", float(self.offset))

    def __call__(self, x, y):
        """Vectorized evaluation; no finiteness check."""
        with np.errstate(over="ignore", invalid="ignore"):
            return (self.offset + np.multiply(x, y)) ** self.degree

    def __str__(self):
        return f"poly:{self.offset:g}:{self.degree}"


_ALIASES = {
    "linear": KernelSpec(0.0, 1),
    "quadratic": KernelSpec(0.0, 2),
    "quartic": KernelSpec(0.0, 4),
}


def parse_kernel(text: str) -> KernelSpec:
    """Parse ``poly:<offset>:<degree>`` or one of ``linear``, ``quadratic``, ``quartic``."""
    text = text.strip().lower()
    if text in _ALIASES:
        return _ALIASES[text]
    m = re.fullmatch(r"poly:([^:]+):(\d+)", text)
    if m is None:
        raise ParameterError(f"cannot parse kernel {text!r}; expected poly:<offset>:<degree>")
    try:
        offset = float(m.group(1))
    except ValueError:
        raise ParameterError(f"bad kernel offset {m.group(1)!r}") from None
    return KernelSpec(offset, int(m.group(2)))


def kernel_eval(spec: KernelSpec, x: float, y: float) -> float:
    """Evaluate the kernel on two scalars.

    Raises
    ------
    KernelOverflowError
        If the result is not finite.
    """
    value = float(spec(float(x), float(y)))
    if not np.isfinite(value):
        raise KernelOverflowError(max(abs(x), abs(y)))
    return value


def gram_matrix(spec: KernelSpec, samples: Sequence[float]) -> np.ndarray:
    """Gram matrix ``[kappa(s_a, s_b)]`` of a set of scalar samples."""
    s = np.asarray(samples, dtype=float).ravel()
    G = spec(s[:, None], s[None, :])
    if not np.all(np.isfinite(G)):
        raise KernelOverflowError(np.max(np.abs(s)))
    return G


@dataclass(frozen=True)
class TimeSeriesPanel:
    """A D-channel real time series stored as an ``(n_s, D)`` array."""

    values: np.ndarray
    channel_names: tuple = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ParameterError(f"panel must be a non-empty (n_s, D) array, got shape {v.shape}")
        bad = np.argwhere(~np.isfinite(v))
        if bad.size:
            r, c = bad[0]
            raise ParameterError(f"non-finite sample at row {r}, channel {c}")
        v.setflags(write=False)
        names = tuple(str(n) for n in self.channel_names) or tuple(
            f"x{i + 1}" for i in range(v.shape[1])
        )
        if len(names) != v.shape[1]:
            raise ParameterError(f"{len(names)} channel names for {v.shape[1]} channels")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def permuted(self, order: Sequence[int]) -> "TimeSeriesPanel":
        order = list(order)
        return TimeSeriesPanel(self.values[:, order], tuple(self.channel_names[i] for i in order))


@dataclass(frozen=True, eq=False)
class LaggedKernelSet:
    """Estimated lagged kernel matrices ``K(tau)`` for ``-max_lag <= tau <= max_lag``.

    ``K(tau)[i, j]`` averages ``kappa(x_i(s), x_j(s + tau))``, so positive lags
    put channel ``j`` ahead of channel ``i``.  ``matrices[tau + max_lag]``
    holds ``K(tau)``; index with ``kset[tau]``.
    """

    matrices: np.ndarray
    sample_count: int
    kernel: KernelSpec | None = None
    channel_names: tuple = ()

    def __post_init__(self):
        m = np.array(self.matrices, dtype=float, copy=True)
        if m.ndim != 3 or m.shape[0] % 2 != 1 or m.shape[1] != m.shape[2]:
            raise ParameterError(f"matrices must have shape (2L+1, D, D), got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)
        if not self.channel_names:
            object.__setattr__(
                self, "channel_names", tuple(f"x{i + 1}" for i in range(m.shape[1]))
            )

    @classmethod
    def from_nonnegative(cls, positive: Sequence[np.ndarray], sample_count: int, **kw):
        """Build from ``[K(0), K(1), ..., K(L)]``; negative lags are mirrored."""
        pos = np.asarray(positive, dtype=float)
        neg = np.transpose(pos[:0:-1], (0, 2, 1))
        return cls(np.concatenate([neg, pos]), sample_count, **kw)

    @property
    def max_lag(self) -> int:
        return (self.matrices.shape[0] - 1) // 2

    @property
    def n_channels(self) -> int:
        return self.matrices.shape[1]

    def __getitem__(self, tau: int) -> np.ndarray:
        tau = int(tau)
        if abs(tau) > self.max_lag:
            raise ParameterError(f"lag {tau} outside estimated range +/-{self.max_lag}")
        return self.matrices[tau + self.max_lag]

    def truncated(self, max_lag: int) -> "LaggedKernelSet":
        if max_lag > self.max_lag:
            raise ParameterError(f"cannot extend lag range {self.max_lag} to {max_lag}")
        L = self.max_lag
        return LaggedKernelSet(
            self.matrices[L - max_lag : L + max_lag + 1],
            self.sample_count,
            self.kernel,
            self.channel_names,
        )

    def permuted(self, order: Sequence[int]) -> "LaggedKernelSet":
        order = list(order)
        return LaggedKernelSet(
            self.matrices[:, order][:, :, order],
            self.sample_count,
            self.kernel,
            tuple(self.channel_names[i] for i in order),
        )


def estimate_lagged_kernels(
    panel: TimeSeriesPanel, spec: KernelSpec, max_lag: int
) -> LaggedKernelSet:
    """Average kernel values over the overlap of each lagged channel pair.

    The divisor is ``n_s`` at every lag, which keeps the block-Toeplitz
    moment matrices positive semidefinite.
    """
    X = panel.values
    n, D = X.shape
    max_lag = int(max_lag)
    if max_lag < 0 or max_lag >= n:
        raise ParameterError(f"max_lag must satisfy 0 <= L < n_s={n}, got {max_lag}")
    pos = np.empty((max_lag + 1, D, D))
    for tau in range(max_lag + 1):
        vals = spec(X[: n - tau, :, None], X[tau:, None, :])
        pos[tau] = vals.sum(axis=0) / n
    if not np.all(np.isfinite(pos)):
        raise KernelOverflowError(np.max(np.abs(X)))
    return LaggedKernelSet.from_nonnegative(
        pos, n, kernel=spec, channel_names=panel.channel_names
    )


def _zero_lag_scales(matrices: np.ndarray, names: Sequence[str], what: str) -> np.ndarray:
    L = (matrices.shape[0] - 1) // 2
    diag = np.diag(matrices[L])
    for i, d in enumerate(diag):
        if not d > 0:
            raise DegenerateChannelError(names[i] if i < len(names) else i, what)
    return np.sqrt(diag)


def kcf_matrices(kset: LaggedKernelSet) -> np.ndarray:
    """Normalized kernel correlation functions for every lag, shape ``(2L+1, D, D)``."""
    s = _zero_lag_scales(kset.matrices, kset.channel_names, "zero-lag kernel moment")
    return kset.matrices / np.outer(s, s)


def kcf(kset: LaggedKernelSet, i: int, j: int, tau: int) -> float:
    """Kernel correlation ``K(tau)[i, j] / sqrt(K(0)[i, i] * K(0)[j, j])``."""
    K0 = kset[0]
    for c in (i, j):
        if not K0[c, c] > 0:
            raise DegenerateChannelError(kset.channel_names[c])
    return float(kset[tau][i, j] / np.sqrt(K0[i, i] * K0[j, j]))

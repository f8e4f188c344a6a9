"""Feature-space vector autoregression fitted through kernelized Yule-Walker equations.

Lag convention (see :class:`~kernelgc.kernels.LaggedKernelSet`):
``K(tau)[i, j] = E kappa(x_i(s), x_j(s + tau))``.  Projecting the model
``phi(x(n)) = sum_k A_k phi(x(n - k)) + w(n)`` on ``phi(x(n - m))`` gives, for
``m = 1..p``,

    K(-m) = sum_k A_k K(k - m)

i.e. ``[A_1 ... A_p] @ G = [K(-1) ... K(-p)]`` with the block-Toeplitz Gram
matrix ``G[r, c] = K(r - c)`` (blocks indexed from 1).  For ``p = 2``::

    G = | K(0)   K(-1) |      rhs = [ K(-1)  K(-2) ]
        | K(1)   K(0)  |

The same matrix is the second moment of the stacked regressor
``[phi(x(n-1)); ...; phi(x(n-p))]`` and therefore also serves as ``Gamma`` in
the asymptotic covariance ``Gamma^-1 (x) Sigma`` of the coefficients.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import (
    DegenerateChannelError,
    IllConditionedError,
    NonUniqueSolutionError,
    ParameterError,
)
from .kernels import KernelSpec, LaggedKernelSet, TimeSeriesPanel, estimate_lagged_kernels

logger = logging.getLogger(__name__)

__all__ = [
    "YuleWalkerSystem",
    "KvarModel",
    "ModelInconsistencyWarning",
    "assemble_yw",
    "block_toeplitz",
    "tls",
    "solve_ls",
    "solve_tls",
    "residual_covariance",
    "residual_kernel_lags",
    "build_gamma",
    "yw_identity_residual",
    "default_diag_lags",
    "fit",
    "fit_kernels",
]

DEFAULT_COND_CAP = 1e12
TLS_GAP_TOL = 1e-10

Solver = Literal["ls", "tls"]


class ModelInconsistencyWarning(UserWarning):
    """Innovations covariance has a clearly negative eigenvalue."""


def block_toeplitz(kset: LaggedKernelSet, p: int) -> np.ndarray:
    """``pD x pD`` matrix whose block ``(r, c)`` is ``K(r - c)``."""
    if p < 1:
        raise ParameterError(f"order must be >= 1, got {p}")
    if kset.max_lag < p - 1:
        raise ParameterError(f"order {p} needs kernel lags up to {p - 1}, have {kset.max_lag}")
    D = kset.n_channels
    out = np.empty((p * D, p * D))
    for r in range(p):
        for c in range(p):
            out[r * D : (r + 1) * D, c * D : (c + 1) * D] = kset[r - c]
    return out


@dataclass(frozen=True, eq=False)
class YuleWalkerSystem:
    """``[A_1 ... A_p] @ gram = [K(-1) ... K(-p)]``.

    ``lhs_blocks`` stacks ``K(-1); ...; K(-p)`` vertically (``pD x D``);
    :attr:`rhs` lays the same blocks side by side (``D x pD``).
    """

    lhs_blocks: np.ndarray
    gram: np.ndarray

    @property
    def order(self) -> int:
        return self.lhs_blocks.shape[0] // self.lhs_blocks.shape[1]

    @property
    def n_channels(self) -> int:
        return self.lhs_blocks.shape[1]

    @property
    def rhs(self) -> np.ndarray:
        D = self.n_channels
        return np.hstack([self.lhs_blocks[k * D : (k + 1) * D] for k in range(self.order)])


def assemble_yw(kset: LaggedKernelSet, p: int) -> YuleWalkerSystem:
    if p < 1:
        raise ParameterError(f"order must be >= 1, got {p}")
    if kset.max_lag < p:
        raise ParameterError(f"order {p} needs kernel lags up to {p}, have {kset.max_lag}")
    lhs = np.vstack([kset[-r] for r in range(1, p + 1)])
    return YuleWalkerSystem(lhs, block_toeplitz(kset, p))


def _unstack(coef: np.ndarray, D: int) -> np.ndarray:
    p = coef.shape[1] // D
    return np.stack([coef[:, k * D : (k + 1) * D] for k in range(p)])


def _stack(coeffs: np.ndarray) -> np.ndarray:
    return np.hstack(list(coeffs))


def _equilibration(gram: np.ndarray) -> np.ndarray:
    d = np.abs(np.diag(gram))
    d = np.where(d > 0, d, 1.0)
    return 1.0 / np.sqrt(d)


def _check_conditioning(gram: np.ndarray, cond_cap: float) -> None:
    # channels in feature space can differ by many orders of magnitude
    # (a quartic-driven channel under a quadratic kernel); measure the
    # condition after unit-diagonal scaling so units alone never trip it
    s = _equilibration(gram)
    cond = np.linalg.cond(gram * s[:, None] * s[None, :])
    if not np.isfinite(cond) or cond > cond_cap:
        raise IllConditionedError(cond, cond_cap)


def solve_ls(sys: YuleWalkerSystem, cond_cap: float = DEFAULT_COND_CAP) -> np.ndarray:
    """Least-squares coefficient blocks, shape ``(p, D, D)``."""
    _check_conditioning(sys.gram, cond_cap)
    s = _equilibration(sys.gram)
    G = sys.gram * s[:, None] * s[None, :]
    sol, *_ = np.linalg.lstsq(G.T, (sys.rhs * s[None, :]).T, rcond=None)
    return _unstack(sol.T * s[None, :], sys.n_channels)


def tls(A: np.ndarray, B: np.ndarray, gap_tol: float = TLS_GAP_TOL) -> np.ndarray:
    """Total least squares solution of ``A @ X ~= B``.

    Uses the right singular vectors of ``[A | B]`` belonging to its ``d``
    smallest singular values (``d = B.shape[1]``).

    Raises
    ------
    NonUniqueSolutionError
        If the singular values on either side of the split are not separated
        by more than ``gap_tol`` relative to the largest, or the trailing
        block of singular vectors is singular.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    m, n = A.shape
    d = B.shape[1]
    if B.shape[0] != m:
        raise ParameterError(f"row mismatch: A has {m}, B has {B.shape[0]}")
    C = np.hstack([A, B])
    _, s, Vt = np.linalg.svd(C, full_matrices=True)
    s = np.concatenate([s, np.zeros(n + d - s.size)])
    if s[0] == 0 or (s[n - 1] - s[n]) <= gap_tol * s[0]:
        raise NonUniqueSolutionError(
            f"degenerate TLS singular gap: s[n-1]={s[n - 1]:.3e}, s[n]={s[n]:.3e}"
        )
    V = Vt.T
    V12 = V[:n, n:]
    V22 = V[n:, n:]
    if np.linalg.cond(V22) > 1.0 / np.finfo(float).eps:
        raise NonUniqueSolutionError("TLS trailing singular block is singular")
    return -np.linalg.solve(V22.T, V12.T).T


def solve_tls(
    sys: YuleWalkerSystem,
    cond_cap: float = DEFAULT_COND_CAP,
    on_degenerate: Literal["raise", "fallback"] = "raise",
) -> np.ndarray:
    """TLS coefficient blocks treating both Gram and right-hand side as noisy.

    With ``on_degenerate="fallback"`` a degenerate singular gap returns the
    least-squares solution and emits a warning instead of raising.
    """
    _check_conditioning(sys.gram, cond_cap)
    try:
        sol = tls(sys.gram.T, sys.rhs.T)
    except NonUniqueSolutionError as exc:
        if on_degenerate != "fallback":
            raise
        warnings.warn(f"{exc}; falling back to least squares", RuntimeWarning, stacklevel=2)
        return solve_ls(sys, cond_cap)
    return _unstack(sol.T, sys.n_channels)


def _as_blocks(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 2:
        c = c[None]
    if c.ndim != 3 or c.shape[1] != c.shape[2]:
        raise ParameterError(f"coefficients must be (p, D, D), got {c.shape}")
    return c


def _psd_check(S: np.ndarray, tol: float = 1e-6) -> str | None:
    eig = np.linalg.eigvalsh(S)
    scale = np.linalg.norm(S, 2)
    if eig[0] < -tol * scale:
        return f"innovations covariance has eigenvalue {eig[0]:.3e} (norm {scale:.3e})"
    return None


def residual_covariance(kset: LaggedKernelSet, coeffs) -> np.ndarray:
    """``K(0) - sum_k sum_l A_k K(k - l) A_l^T``, symmetrized."""
    A = _as_blocks(coeffs)
    p = A.shape[0]
    if kset.max_lag < p:
        raise ParameterError(f"order {p} needs kernel lags up to {p}, have {kset.max_lag}")
    S = kset[0].copy()
    for k in range(1, p + 1):
        for l in range(1, p + 1):
            S -= A[k - 1] @ kset[k - l] @ A[l - 1].T
    S = 0.5 * (S + S.T)
    msg = _psd_check(S)
    if msg:
        warnings.warn(msg, ModelInconsistencyWarning, stacklevel=2)
    return S


def residual_kernel_lags(
    kset: LaggedKernelSet, coeffs, max_lag: int, cross_terms: bool = True
) -> LaggedKernelSet:
    """Lagged second moments of the feature-space residuals for ``|tau| <= max_lag``.

    With ``cross_terms=True`` (default) this is the exact lagged moment of
    the filtered sequence ``phi(x(n)) - sum_k A_k phi(x(n-k))``::

        R(tau) = K(tau) - sum_l K(tau - l) A_l^T - sum_k A_k K(tau + k)
                 + sum_k sum_l A_k K(tau + k - l) A_l^T

    ``cross_terms=False`` keeps only the first and last terms.  Both forms
    coincide at ``tau = 0`` whenever the Yule-Walker equations hold exactly.
    """
    A = _as_blocks(coeffs)
    p = A.shape[0]
    need = max_lag + p
    if kset.max_lag < need:
        raise ParameterError(
            f"residual lags up to {max_lag} at order {p} need kernel lags up to {need}, "
            f"have {kset.max_lag}"
        )
    D = kset.n_channels
    pos = np.empty((max_lag + 1, D, D))
    for tau in range(max_lag + 1):
        R = kset[tau].copy()
        for k in range(1, p + 1):
            for l in range(1, p + 1):
                R += A[k - 1] @ kset[tau + k - l] @ A[l - 1].T
        if cross_terms:
            for l in range(1, p + 1):
                R -= kset[tau - l] @ A[l - 1].T
            for k in range(1, p + 1):
                R -= A[k - 1] @ kset[tau + k]
        else:
            R = 2.0 * kset[tau] - R
        pos[tau] = R
    pos[0] = 0.5 * (pos[0] + pos[0].T)
    return LaggedKernelSet.from_nonnegative(
        pos, kset.sample_count, kernel=kset.kernel, channel_names=kset.channel_names
    )


def build_gamma(kset: LaggedKernelSet, p: int) -> np.ndarray:
    """Second moment of the stacked regressor, block ``(r, c) = K(r - c)``."""
    return block_toeplitz(kset, p)


def yw_identity_residual(kset: LaggedKernelSet, coeffs, sigma: np.ndarray) -> float:
    """Relative Frobenius residual of ``[I, -A_1, ..., -A_p] K_{p+1} = [Sigma, 0, ..., 0]``."""
    A = _as_blocks(coeffs)
    p, D = A.shape[0], A.shape[1]
    big = block_toeplitz(kset, p + 1)
    M = np.hstack([np.eye(D)] + [-a for a in A])
    target = np.zeros((D, (p + 1) * D))
    target[:, :D] = sigma
    return float(np.linalg.norm(M @ big - target) / np.linalg.norm(big))


def default_diag_lags(n_s: int) -> int:
    return max(1, min(20, n_s // 8))


@dataclass(frozen=True, eq=False)
class KvarModel:
    """A fitted feature-space VAR.

    ``coeffs[k - 1][i, j]`` is the weight of channel ``j`` at lag ``k`` in the
    equation for channel ``i``.
    """

    order: int
    coeffs: np.ndarray
    sigma_w: np.ndarray
    gamma: np.ndarray
    kernel: KernelSpec | None
    sample_count: int
    solver: str
    kset: LaggedKernelSet
    yw_residual: float = float("nan")
    notes: tuple = field(default=())

    def __post_init__(self):
        for name in ("coeffs", "sigma_w", "gamma"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_channels(self) -> int:
        return self.coeffs.shape[1]

    @property
    def channel_names(self) -> tuple:
        return self.kset.channel_names

    @property
    def stacked(self) -> np.ndarray:
        """``[A_1 ... A_p]`` as a ``D x pD`` matrix."""
        return _stack(self.coeffs)

    def coefficient(self, target: int, source: int, lag: int = 1) -> float:
        return float(self.coeffs[lag - 1][target, source])

    def residual_lags(self, max_lag: int, cross_terms: bool = True) -> LaggedKernelSet:
        return residual_kernel_lags(self.kset, self.coeffs, max_lag, cross_terms)


def fit_kernels(
    kset: LaggedKernelSet,
    p: int,
    solver: Solver = "tls",
    cond_cap: float = DEFAULT_COND_CAP,
) -> KvarModel:
    """Fit an order-``p`` model from already estimated lagged kernels."""
    solver = solver.lower()
    if solver not in ("ls", "tls"):
        raise ParameterError(f"solver must be 'ls' or 'tls', got {solver!r}")
    K0 = kset[0]
    for i in range(kset.n_channels):
        if not K0[i, i] > 0:
            raise DegenerateChannelError(kset.channel_names[i])
    sys = assemble_yw(kset, p)
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if solver == "tls":
            coeffs = solve_tls(sys, cond_cap, on_degenerate="fallback")
        else:
            coeffs = solve_ls(sys, cond_cap)
        sigma = residual_covariance(kset, coeffs)
    for w in caught:
        logger.warning("%s", w.message)
        notes.append(str(w.message))
    return KvarModel(
        order=p,
        coeffs=coeffs,
        sigma_w=sigma,
        gamma=build_gamma(kset, p),
        kernel=kset.kernel,
        sample_count=kset.sample_count,
        solver=solver,
        kset=kset,
        yw_residual=yw_identity_residual(kset, coeffs, sigma),
        notes=tuple(notes),
    )


def fit(
    panel: TimeSeriesPanel,
    spec: KernelSpec,
    p: int,
    solver: Solver = "tls",
    diag_lags: int | None = None,
    cond_cap: float = DEFAULT_COND_CAP,
) -> KvarModel:
    """Estimate lagged kernels from ``panel`` and fit an order-``p`` model.

    Kernels are estimated up to lag ``p + diag_lags`` so that residual
    diagnostics can be computed from the returned model without going back
    to the data.
    """
    n, D = panel.values.shape
    if p < 1:
        raise ParameterError(f"order must be >= 1, got {p}")
    if n <= p * D:
        raise ParameterError(f"need n_s > p*D ({p}*{D}), got n_s={n}")
    if diag_lags is None:
        diag_lags = default_diag_lags(n)
    max_lag = min(p + diag_lags, n - 1)
    kset = estimate_lagged_kernels(panel, spec, max_lag)
    return fit_kernels(kset, p, solver, cond_cap)

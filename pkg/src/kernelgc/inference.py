"""Wald tests of feature-space coefficient nullity (kernel Granger causality)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import NumericalError, ParameterError
from .kvar import KvarModel

__all__ = [
    "ContrastMatrix",
    "GcTestResult",
    "vec_coeffs",
    "unvec_coeffs",
    "vec_index",
    "gc_contrast",
    "coefficient_covariance",
    "wald_statistic",
    "gc_test_all_pairs",
    "chi2_sf",
    "normal_quantile",
    "filliben_coefficient",
    "normal_order_medians",
]


def chi2_sf(x: float, dof: int) -> float:
    """Upper-tail probability of the chi-squared distribution."""
    if not dof >= 1:
        raise ParameterError(f"degrees of freedom must be >= 1, got {dof}")
    if not x >= 0:
        raise ParameterError(f"chi-squared argument must be >= 0, got {x}")
    return float(stats.chi2.sf(x, dof))


def normal_quantile(q: float) -> float:
    if not 0.0 < q < 1.0:
        raise ParameterError(f"quantile level must lie in (0, 1), got {q}")
    return float(stats.norm.ppf(q))


def vec_coeffs(model_or_blocks) -> np.ndarray:
    """Column-stack ``[A_1 ... A_p]``: ``a[k*D*D + c*D + r] = A_{k+1}[r, c]``."""
    coeffs = model_or_blocks.coeffs if isinstance(model_or_blocks, KvarModel) else model_or_blocks
    coeffs = np.asarray(coeffs, dtype=float)
    return np.hstack(list(coeffs)).ravel(order="F")


def unvec_coeffs(a: np.ndarray, D: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.size % (D * D):
        raise ParameterError(f"vector of length {a.size} is not a multiple of D^2={D * D}")
    p = a.size // (D * D)
    M = a.reshape((D, p * D), order="F")
    return np.stack([M[:, k * D : (k + 1) * D] for k in range(p)])


def vec_index(D: int, target: int, source: int, lag: int) -> int:
    """Position of ``A_lag[target, source]`` in :func:`vec_coeffs` (0-based channels, lag >= 1)."""
    return (lag - 1) * D * D + source * D + target


@dataclass(frozen=True, eq=False)
class ContrastMatrix:
    """Restriction ``C a = 0`` on the stacked coefficient vector."""

    rows: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.array(self.rows, dtype=float, copy=True))
        if C.shape[0] < 1:
            raise ParameterError("contrast needs at least one row")
        if np.linalg.matrix_rank(C) != C.shape[0]:
            raise ParameterError("contrast matrix must have full row rank")
        C.setflags(write=False)
        object.__setattr__(self, "rows", C)

    @property
    def rank(self) -> int:
        return self.rows.shape[0]

    def scaled(self, factors: Sequence[float]) -> "ContrastMatrix":
        return ContrastMatrix(np.asarray(factors, dtype=float)[:, None] * self.rows)


def gc_contrast(D: int, p: int, target: int, source: int) -> ContrastMatrix:
    """Select ``A_k[target, source]`` for ``k = 1..p`` (null: source does not cause target)."""
    for name, ch in (("target", target), ("source", source)):
        if not 0 <= ch < D:
            raise ParameterError(f"{name} channel {ch} outside 0..{D - 1}")
    if target == source:
        raise ParameterError("self-causality cannot be tested: target == source")
    C = np.zeros((p, p * D * D))
    for k in range(1, p + 1):
        C[k - 1, vec_index(D, target, source, k)] = 1.0
    return ContrastMatrix(C)


@dataclass(frozen=True)
class GcTestResult:
    source: int
    target: int
    statistic: float
    dof: int
    p_value: float
    alpha: float
    reject: bool
    estimates: tuple = field(default=())
    source_name: str = ""
    target_name: str = ""

    @property
    def label(self) -> str:
        return f"{self.target_name or self.target}<-{self.source_name or self.source}"

    def as_dict(self) -> dict:
        return {
            "target": self.target_name,
            "source": self.source_name,
            "statistic": self.statistic,
            "dof": self.dof,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "estimates": list(self.estimates),
        }


def coefficient_covariance(model: KvarModel) -> np.ndarray:
    """Asymptotic covariance ``Gamma^-1 (x) Sigma`` of ``sqrt(n_s) (a_hat - a)``."""
    try:
        ginv = np.linalg.inv(model.gamma)
    except np.linalg.LinAlgError:
        raise NumericalError("Gamma matrix is singular") from None
    return np.kron(ginv, model.sigma_w)


def wald_statistic(
    model: KvarModel,
    C: ContrastMatrix,
    alpha: float = 0.01,
    source: int = -1,
    target: int = -1,
) -> GcTestResult:
    """Wald statistic ``n_s (C a)^T [C (Gamma^-1 (x) Sigma) C^T]^-1 (C a)``.

    The ``n_s`` factor matches the ``sqrt(n_s)`` normalization of the
    coefficient covariance; the statistic is referred to chi-squared with
    ``rank(C)`` degrees of freedom.
    """
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    a = vec_coeffs(model)
    if C.rows.shape[1] != a.size:
        raise ParameterError(f"contrast has {C.rows.shape[1]} columns, model has {a.size} coefficients")
    V = coefficient_covariance(model)
    M = C.rows @ V @ C.rows.T
    M = 0.5 * (M + M.T)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericalError(f"restricted covariance is singular (cond={cond:.3e})")
    Ca = C.rows @ a
    stat = float(model.sample_count * Ca @ np.linalg.solve(M, Ca))
    stat = max(stat, 0.0)
    pval = chi2_sf(stat, C.rank)
    names = model.channel_names
    return GcTestResult(
        source=source,
        target=target,
        statistic=stat,
        dof=C.rank,
        p_value=pval,
        alpha=alpha,
        reject=bool(pval < alpha),
        estimates=tuple(float(v) for v in Ca),
        source_name=names[source] if 0 <= source < len(names) else "",
        target_name=names[target] if 0 <= target < len(names) else "",
    )


def gc_test_all_pairs(model: KvarModel, alpha: float = 0.01) -> list[GcTestResult]:
    """Test every ordered pair ``target <- source``, target-major order."""
    D = model.n_channels
    if D < 2:
        raise ParameterError("Granger tests need at least two channels")
    out = []
    for i in range(D):
        for j in range(D):
            if i != j:
                C = gc_contrast(D, model.order, i, j)
                out.append(wald_statistic(model, C, alpha, source=j, target=i))
    return out


def normal_order_medians(n: int) -> np.ndarray:
    """Filliben's approximation to the medians of standard normal order statistics."""
    u = (np.arange(1, n + 1) - 0.3175) / (n + 0.365)
    u[-1] = 0.5 ** (1.0 / n)
    u[0] = 1.0 - u[-1]
    return stats.norm.ppf(u)


def filliben_coefficient(sample) -> float:
    """Squared probability-plot correlation against normal order-statistic medians."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size < 3:
        raise ParameterError("Filliben coefficient needs at least 3 values")
    if np.ptp(x) == 0:
        raise NumericalError("Filliben coefficient undefined for a constant sample")
    m = normal_order_medians(x.size)
    r = np.corrcoef(x, m)[0, 1]
    return float(min(r * r, 1.0))

"""Order selection by generalized information criteria and residual whiteness checks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import DegenerateChannelError, KernelGCError, NumericalError, ParameterError
from .inference import chi2_sf, normal_quantile
from .kernels import KernelSpec, LaggedKernelSet, TimeSeriesPanel, estimate_lagged_kernels
from .kvar import KvarModel, fit_kernels

logger = logging.getLogger(__name__)

__all__ = [
    "OrderScan",
    "WhitenessReport",
    "penalty_constant",
    "gaic",
    "order_scan",
    "order_scan_kernels",
    "residual_kcf",
    "whiteness_test",
    "diagnose_model",
]

Flavor = Literal["aic", "hq"]


def penalty_constant(flavor: str, n_s: int) -> float:
    flavor = flavor.lower()
    if flavor == "aic":
        return 2.0
    if flavor == "hq":
        if n_s < 3:
            raise ParameterError("Hannan-Quinn penalty needs n_s >= 3")
        return math.log(math.log(n_s))
    raise ParameterError(f"unknown criterion {flavor!r}; expected 'aic' or 'hq'")


def gaic(sigma: np.ndarray, k: int, n_s: int, flavor: str = "hq") -> float:
    """``ln det(Sigma) + c(n_s) * k * D^2 / n_s``; ``nan`` if Sigma is not positive definite."""
    sigma = np.atleast_2d(sigma)
    D = sigma.shape[0]
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0 or not np.isfinite(logdet):
        return float("nan")
    return float(logdet + penalty_constant(flavor, n_s) * k * D * D / n_s)


@dataclass(frozen=True)
class OrderScan:
    orders: tuple
    values: tuple
    flavor: str
    penalty: float
    selected: int
    notes: dict = field(default_factory=dict)

    def as_rows(self) -> list[dict]:
        return [
            {"order": k, "criterion": v, "note": self.notes.get(k, "")}
            for k, v in zip(self.orders, self.values)
        ]


def order_scan_kernels(
    kset: LaggedKernelSet, p_max: int, flavor: Flavor = "hq", solver: str = "tls"
) -> OrderScan:
    """Evaluate the criterion for orders ``1..p_max`` on one set of lagged kernels."""
    if p_max < 1:
        raise ParameterError(f"p_max must be >= 1, got {p_max}")
    n_s = kset.sample_count
    c = penalty_constant(flavor, n_s)
    values, notes = [], {}
    for k in range(1, p_max + 1):
        try:
            model = fit_kernels(kset, k, solver)
            v = gaic(model.sigma_w, k, n_s, flavor)
            if not np.isfinite(v):
                notes[k] = "innovations covariance not positive definite"
        except (NumericalError, DegenerateChannelError) as exc:
            v = float("nan")
            notes[k] = str(exc)
        values.append(v)
    arr = np.array(values)
    if not np.any(np.isfinite(arr)):
        raise NumericalError(f"no admissible order in 1..{p_max}: {notes}")
    # nanargmin returns the first minimum, so ties go to the smaller order
    selected = int(np.nanargmin(arr)) + 1
    return OrderScan(tuple(range(1, p_max + 1)), tuple(values), flavor.lower(), c, selected, notes)


def order_scan(
    panel: TimeSeriesPanel,
    spec: KernelSpec,
    p_max: int,
    flavor: Flavor = "hq",
    solver: str = "tls",
) -> OrderScan:
    n, D = panel.values.shape
    if p_max < 1 or p_max * D >= n:
        raise ParameterError(f"need 1 <= p_max and p_max*D < n_s, got p_max={p_max}, D={D}, n_s={n}")
    kset = estimate_lagged_kernels(panel, spec, p_max)
    return order_scan_kernels(kset, p_max, flavor, solver)


def residual_kcf(sigma_lags: LaggedKernelSet) -> np.ndarray:
    """Normalize residual lag moments by their zero-lag diagonal, shape ``(2L+1, D, D)``."""
    S0 = sigma_lags[0]
    diag = np.diag(S0)
    for i, d in enumerate(diag):
        if not d > 0:
            raise DegenerateChannelError(sigma_lags.channel_names[i], "residual variance")
    s = np.sqrt(diag)
    return sigma_lags.matrices / np.outer(s, s)


@dataclass(frozen=True, eq=False)
class WhitenessReport:
    """Per-lag threshold flags plus a multivariate portmanteau statistic."""

    kcf: np.ndarray
    max_lag: int
    sample_count: int
    alpha: float
    threshold: float
    flags: np.ndarray
    q_statistic: float
    dof: int
    p_value: float

    @property
    def fraction_inside(self) -> float:
        """Share of ``tau != 0`` values within the threshold band."""
        n_values = 2 * self.max_lag * self.kcf.shape[1] ** 2
        return 1.0 - self.flags.sum() / n_values

    @property
    def reject(self) -> bool:
        return self.p_value < self.alpha

    def rows(self, names=None) -> list[dict]:
        D = self.kcf.shape[1]
        names = names or [f"x{i + 1}" for i in range(D)]
        out = []
        for t, tau in enumerate(range(-self.max_lag, self.max_lag + 1)):
            for i in range(D):
                for j in range(D):
                    out.append(
                        {
                            "tau": tau,
                            "row": names[i],
                            "col": names[j],
                            "value": float(self.kcf[t, i, j]),
                            "flag": bool(self.flags[t, i, j]),
                        }
                    )
        return out


def whiteness_test(
    kcf_r: np.ndarray,
    n_s: int,
    alpha: float = 0.01,
    max_lag: int | None = None,
    order: int = 0,
) -> WhitenessReport:
    """Flag residual kernel correlations outside ``+/- z_{1-alpha/2} / sqrt(n_s)``.

    ``kcf_r`` has shape ``(2L+1, D, D)`` centred on lag 0.  The portmanteau
    statistic ``Q = n_s * sum_{tau=1..L} tr(C_tau^T C_0^-1 C_tau C_0^-1)`` is
    referred to chi-squared with ``D^2 (L - order)`` degrees of freedom.
    """
    kcf_r = np.asarray(kcf_r, dtype=float)
    L_full = (kcf_r.shape[0] - 1) // 2
    L = L_full if max_lag is None else int(max_lag)
    if L < 1 or L > L_full:
        raise ParameterError(f"max_lag must lie in 1..{L_full}, got {L}")
    if L <= order:
        raise ParameterError(f"portmanteau needs max_lag > order ({L} <= {order})")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    C = kcf_r[L_full - L : L_full + L + 1]
    D = C.shape[1]
    thr = normal_quantile(1.0 - alpha / 2.0) / math.sqrt(n_s)
    flags = np.abs(C) > thr
    flags[L] = False
    C0 = C[L]
    try:
        C0inv = np.linalg.inv(C0)
    except np.linalg.LinAlgError:
        raise NumericalError("zero-lag residual correlation matrix is singular") from None
    q = 0.0
    for tau in range(1, L + 1):
        Ct = C[L + tau]
        q += float(np.trace(Ct.T @ C0inv @ Ct @ C0inv))
    q = max(n_s * q, 0.0)
    dof = D * D * (L - order)
    return WhitenessReport(C, L, n_s, alpha, thr, flags, q, dof, chi2_sf(q, dof))


def diagnose_model(
    model: KvarModel, alpha: float = 0.01, max_lag: int | None = None, cross_terms: bool = True
) -> WhitenessReport:
    """Residual whiteness report for a fitted model using its stored kernels."""
    available = model.kset.max_lag - model.order
    L = available if max_lag is None else int(max_lag)
    if L < 1:
        raise KernelGCError(f"model kernels only reach lag {model.kset.max_lag}; refit with more lags")
    lags = model.residual_lags(L, cross_terms)
    return whiteness_test(residual_kcf(lags), model.sample_count, alpha, L, model.order)

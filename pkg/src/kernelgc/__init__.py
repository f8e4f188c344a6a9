"""Nonlinear Granger causality through vector autoregression in a kernel feature space."""

__version__ = "0.1.0"

from .errors import (
    DataError,
    DegenerateChannelError,
    DivergenceError,
    IllConditionedError,
    KernelGCError,
    KernelOverflowError,
    NonUniqueSolutionError,
    NumericalError,
    ParameterError,
)
from .kernels import (
    KernelSpec,
    LaggedKernelSet,
    TimeSeriesPanel,
    estimate_lagged_kernels,
    gram_matrix,
    kcf,
    kcf_matrices,
    kernel_eval,
    parse_kernel,
)
from .kvar import (
    KvarModel,
    YuleWalkerSystem,
    assemble_yw,
    build_gamma,
    fit,
    fit_kernels,
    residual_covariance,
    residual_kernel_lags,
    solve_ls,
    solve_tls,
    tls,
)
from .diagnostics import (
    OrderScan,
    WhitenessReport,
    diagnose_model,
    gaic,
    order_scan,
    order_scan_kernels,
    penalty_constant,
    residual_kcf,
    whiteness_test,
)
from .inference import (
    ContrastMatrix,
    GcTestResult,
    chi2_sf,
    filliben_coefficient,
    gc_contrast,
    coefficient_covariance,
    gc_test_all_pairs,
    normal_order_medians,
    normal_quantile,
    unvec_coeffs,
    vec_coeffs,
    vec_index,
    wald_statistic,
)
from .simulate import (
    SimulationConfig,
    SystemSpec,
    builtin_systems,
    get_system,
    load_system,
    simulate,
    simulate_replication,
)

import warnings

import numpy as np
import pytest

from kernelgc import (
    DegenerateChannelError,
    IllConditionedError,
    LaggedKernelSet,
    NonUniqueSolutionError,
    ParameterError,
    TimeSeriesPanel,
    assemble_yw,
    build_gamma,
    estimate_lagged_kernels,
    fit,
    fit_kernels,
    get_system,
    residual_covariance,
    residual_kernel_lags,
    simulate,
    SimulationConfig,
    solve_ls,
    solve_tls,
    tls,
)
from kernelgc.kvar import YuleWalkerSystem

from conftest import LINEAR, QUAD, ex1_panel, linear_var_panel


def kset_from_dict(K, n=100):
    L = max(K)
    return LaggedKernelSet.from_nonnegative([K[t] for t in range(L + 1)], n)


def place_blocks(kset, p, lag_of):
    """Index-arithmetic oracle: explicit element placement."""
    D = kset.n_channels
    M = np.zeros((p * D, p * D))
    for a in range(p * D):
        for b in range(p * D):
            r, i = divmod(a, D)
            c, j = divmod(b, D)
            M[a, b] = kset[lag_of(r + 1, c + 1)][i, j]
    return M


def consistent_system(rng, p, D):
    X = rng.standard_normal((200, D))
    ks = estimate_lagged_kernels(TimeSeriesPanel(X), LINEAR, p)
    gram = assemble_yw(ks, p).gram
    A0 = rng.uniform(-0.5, 0.5, (D, p * D))
    rhs = A0 @ gram
    lhs = np.vstack([rhs[:, k * D:(k + 1) * D] for k in range(p)])
    return YuleWalkerSystem(lhs, gram), A0


def stacked(blocks):
    return np.hstack(list(blocks))


class TestAssemble:
    def test_order_one(self, random_kset):
        sys = assemble_yw(random_kset, 1)
        np.testing.assert_array_equal(sys.lhs_blocks, random_kset[-1])
        np.testing.assert_array_equal(sys.gram, random_kset[0])

    def test_scalar_ar_structure(self):
        rho = 0.4
        ks = kset_from_dict({t: np.array([[rho ** t]]) for t in range(4)})
        np.testing.assert_allclose(assemble_yw(ks, 2).gram, [[1, rho], [rho, 1]])

    def test_order_three_placement(self, random_kset):
        sys = assemble_yw(random_kset, 3)
        np.testing.assert_array_equal(sys.gram, place_blocks(random_kset, 3, lambda r, c: r - c))
        D = random_kset.n_channels
        for r in range(1, 4):
            np.testing.assert_array_equal(sys.lhs_blocks[(r - 1) * D:r * D], random_kset[-r])
            np.testing.assert_array_equal(sys.rhs[:, (r - 1) * D:r * D], random_kset[-r])
        np.testing.assert_array_equal(sys.gram, sys.gram.T)

    def test_insufficient_lags(self, random_kset):
        with pytest.raises(ParameterError):
            assemble_yw(random_kset.truncated(2), 3)


class TestSolvers:
    def test_identity_gram(self):
        sys = YuleWalkerSystem(np.diag([0.5, 0.3]), np.eye(2))
        np.testing.assert_allclose(solve_ls(sys)[0], np.diag([0.5, 0.3]))
        np.testing.assert_allclose(solve_tls(sys)[0], np.diag([0.5, 0.3]), atol=1e-14)

    @pytest.mark.parametrize("p,D", [(1, 2), (2, 3), (3, 2)])
    def test_consistent_round_trip(self, p, D):
        rng = np.random.default_rng(p * 10 + D)
        sys, A0 = consistent_system(rng, p, D)
        A_ls = stacked(solve_ls(sys))
        A_tls = stacked(solve_tls(sys))
        assert np.linalg.norm(A_ls - A0) <= 1e-8
        assert np.linalg.norm(A_tls - A_ls) <= 1e-8

    def test_ar1_linear_kernel_against_regression(self):
        panel = linear_var_panel([[[0.5]]], 4096, seed=5)
        x = panel.values[:, 0]
        ols = np.linalg.lstsq(x[:-1, None], x[1:], rcond=None)[0][0]
        model = fit(panel, LINEAR, 1, solver="ls")
        a = model.coefficient(0, 0, 1)
        assert abs(a - 0.5) < 0.05
        assert abs(a - ols) < 0.01

    def test_ill_conditioned_gram(self):
        sys = YuleWalkerSystem(np.eye(2), np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]]))
        with pytest.raises(IllConditionedError):
            solve_ls(sys)

    def test_channel_scale_does_not_trip_cap(self):
        G = np.diag([1.0, 1e16])
        sys = YuleWalkerSystem(np.diag([0.5, 0.3e16]), G)
        np.testing.assert_allclose(solve_ls(sys)[0], np.diag([0.5, 0.3]))

    def test_ill_conditioned_reports_estimate(self):
        sys = YuleWalkerSystem(np.eye(2), np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]]))
        with pytest.raises(IllConditionedError) as info:
            solve_ls(sys)
        assert info.value.condition > 1e12

    def test_tls_degenerate_gap(self):
        with pytest.raises(NonUniqueSolutionError):
            tls(np.zeros((3, 2)), np.zeros((3, 1)))

    def test_tls_fallback_warns(self, monkeypatch):
        import kernelgc.kvar as kvar

        def boom(*a, **k):
            raise NonUniqueSolutionError("forced")

        monkeypatch.setattr(kvar, "tls", boom)
        sys = YuleWalkerSystem(np.diag([0.5, 0.3]), np.eye(2))
        with pytest.raises(NonUniqueSolutionError):
            solve_tls(sys)
        with pytest.warns(RuntimeWarning, match="falling back"):
            out = solve_tls(sys, on_degenerate="fallback")
        np.testing.assert_allclose(out[0], np.diag([0.5, 0.3]))

    def test_tls_square_equals_ls_under_noise(self):
        rng = np.random.default_rng(9)
        sys, _ = consistent_system(rng, 2, 2)
        noisy = YuleWalkerSystem(sys.lhs_blocks + 1e-3 * rng.standard_normal(sys.lhs_blocks.shape),
                                 sys.gram + 1e-3 * rng.standard_normal(sys.gram.shape))
        np.testing.assert_allclose(stacked(solve_tls(noisy)), stacked(solve_ls(noisy)), atol=1e-9)

    def test_tls_beats_ls_with_errors_in_variables(self):
        """Monte Carlo oracle: noise on both sides of a tall consistent system."""
        rng = np.random.default_rng(123)
        err_ls, err_tls = [], []
        for _ in range(100):
            A = rng.standard_normal((60, 3))
            X0 = rng.standard_normal((3, 2))
            B = A @ X0
            sigma = 0.3
            An = A + sigma * rng.standard_normal(A.shape)
            Bn = B + sigma * rng.standard_normal(B.shape)
            err_ls.append(np.linalg.norm(np.linalg.lstsq(An, Bn, rcond=None)[0] - X0))
            err_tls.append(np.linalg.norm(tls(An, Bn) - X0))
        assert np.mean(err_tls) <= np.mean(err_ls)


class TestResidualCovariance:
    def test_no_model(self):
        ks = kset_from_dict({0: np.eye(2), 1: np.zeros((2, 2))})
        np.testing.assert_allclose(residual_covariance(ks, np.zeros((1, 2, 2))), np.eye(2))

    def test_order_one_closed_form(self):
        A = np.diag([0.5, 0.3])
        ks = kset_from_dict({0: np.eye(2), 1: A.T})
        coeffs = solve_ls(assemble_yw(ks, 1))
        np.testing.assert_allclose(coeffs[0], A)
        np.testing.assert_allclose(residual_covariance(ks, coeffs), np.diag([0.75, 0.91]))

    def test_double_sum_oracle(self, random_kset):
        p = 3
        coeffs = solve_ls(assemble_yw(random_kset, p))
        ref = random_kset[0].copy()
        for k in range(p):
            for l in range(p):
                ref = ref - coeffs[k] @ random_kset[k - l] @ coeffs[l].T
        np.testing.assert_allclose(residual_covariance(random_kset, coeffs), ref, rtol=1e-12, atol=1e-12)

    def test_negative_eigenvalue_warns(self):
        ks = kset_from_dict({0: np.eye(2), 1: np.zeros((2, 2))})
        with pytest.warns(UserWarning, match="eigenvalue"):
            residual_covariance(ks, 2 * np.eye(2)[None])


class TestResidualLags:
    def test_passthrough_without_model(self, random_kset):
        R = residual_kernel_lags(random_kset, np.zeros((2, 3, 3)), 4)
        for tau in range(-4, 5):
            np.testing.assert_array_equal(R[tau], random_kset[tau])

    @pytest.mark.parametrize("solver", [solve_ls, solve_tls])
    def test_zero_lag_matches_covariance(self, random_kset, solver):
        coeffs = solver(assemble_yw(random_kset, 2))
        R = residual_kernel_lags(random_kset, coeffs, 3)
        S = residual_covariance(random_kset, coeffs)
        assert np.abs(R[0] - S).max() <= 1e-12 * np.abs(S).max() * 10

    def test_matches_explicit_filtered_sequence(self):
        """Linear kernel: moments of the zero-padded residual sequence."""
        rng = np.random.default_rng(2)
        X = rng.standard_normal((80, 2))
        n, D = X.shape
        p, L = 2, 5
        ks = estimate_lagged_kernels(TimeSeriesPanel(X), LINEAR, L + p)
        coeffs = solve_ls(assemble_yw(ks, p))
        padded = np.vstack([np.zeros((p, D)), X, np.zeros((p, D))])
        w = padded.copy()
        for k in range(1, p + 1):
            w[k:] -= padded[:-k] @ coeffs[k - 1].T
        R = residual_kernel_lags(ks, coeffs, L)
        for tau in range(0, L + 1):
            ref = w[: len(w) - tau].T @ w[tau:] / n
            np.testing.assert_allclose(R[tau], ref, atol=1e-12)

    def test_two_term_form_without_cross_terms(self):
        rho = 0.6
        ks = kset_from_dict({t: np.array([[rho ** t]]) for t in range(6)})
        coeffs = solve_ls(assemble_yw(ks, 1))
        short = residual_kernel_lags(ks, coeffs, 3, cross_terms=False)
        full = residual_kernel_lags(ks, coeffs, 3)
        for tau in range(1, 4):
            assert short[tau][0, 0] / short[0][0, 0] == pytest.approx(rho ** tau)
            assert full[tau][0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_insufficient_lags(self, random_kset):
        with pytest.raises(ParameterError, match="up to 10"):
            residual_kernel_lags(random_kset, np.zeros((2, 3, 3)), 8)


class TestGamma:
    def test_order_one(self, random_kset):
        np.testing.assert_array_equal(build_gamma(random_kset, 1), random_kset[0])

    def test_order_two_unrolled(self, random_kset):
        K = random_kset
        expected = np.block([[K[0], K[-1]], [K[1], K[0]]])
        np.testing.assert_array_equal(build_gamma(K, 2), expected)

    def test_order_four_placement(self, random_kset):
        G = build_gamma(random_kset, 4)
        np.testing.assert_array_equal(G, place_blocks(random_kset, 4, lambda r, c: r - c))
        np.testing.assert_allclose(G, G.T, atol=0)

    def test_is_regressor_second_moment(self):
        """Gamma equals Z Z^T / n for the zero-padded stacked lag vector."""
        rng = np.random.default_rng(8)
        X = rng.standard_normal((50, 2))
        n, D = X.shape
        p = 3
        ks = estimate_lagged_kernels(TimeSeriesPanel(X), LINEAR, p)
        padded = np.vstack([np.zeros((p, D)), X, np.zeros((p, D))])
        rows = []
        for t in range(len(padded) + p):
            z = [padded[t - r] if 0 <= t - r < len(padded) else np.zeros(D) for r in range(1, p + 1)]
            rows.append(np.concatenate(z))
        Z = np.array(rows).T
        np.testing.assert_allclose(build_gamma(ks, p), Z @ Z.T / n, atol=1e-12)


class TestFit:
    def test_zero_panel_is_degenerate(self):
        with pytest.raises(DegenerateChannelError):
            fit(TimeSeriesPanel(np.zeros((64, 2))), QUAD, 1)

    def test_too_short(self):
        with pytest.raises(ParameterError):
            fit(TimeSeriesPanel(np.random.default_rng(0).standard_normal((4, 2))), QUAD, 2)

    def test_yw_identity(self, random_kset):
        for solver in ("ls", "tls"):
            model = fit_kernels(random_kset, 3, solver)
            assert model.yw_residual <= 1e-8

    def test_permutation_equivariance(self, ex1_512):
        perm = [1, 0]
        m = fit(ex1_512, QUAD, 2)
        mp = fit(ex1_512.permuted(perm), QUAD, 2)
        P = np.eye(2)[perm]
        for k in range(2):
            np.testing.assert_allclose(mp.coeffs[k], P @ m.coeffs[k] @ P.T, atol=1e-10)
        np.testing.assert_allclose(mp.sigma_w, P @ m.sigma_w @ P.T, atol=1e-8)
        Pb = np.kron(np.eye(2), P)
        np.testing.assert_allclose(mp.gamma, Pb @ m.gamma @ Pb.T, atol=1e-10)

    @pytest.mark.parametrize("name", ["example1", "example2", "example3", "example4", "example5"])
    def test_sigma_psd_on_builtin_systems(self, name):
        spec = get_system(name)
        panel = simulate(spec, SimulationConfig(1024, 3, 0))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            model = fit(panel, QUAD, spec.model_order)
        S = model.sigma_w
        np.testing.assert_allclose(S, S.T, atol=1e-9 * np.abs(S).max())
        assert np.linalg.eigvalsh(S).min() >= -1e-9 * np.linalg.norm(S, 2)
        assert np.linalg.eigvalsh(model.gamma).min() >= -1e-9 * np.linalg.norm(model.gamma, 2)

    def test_example1_structure(self):
        model = fit(ex1_panel(2048), QUAD, 1, solver="tls")
        assert abs(model.coefficient(1, 0)) < 0.1
        assert abs(model.coefficient(1, 1) - 0.6) < 0.1

    def test_model_is_read_only(self, random_kset):
        model = fit_kernels(random_kset, 1)
        with pytest.raises(ValueError):
            model.coeffs[0, 0, 0] = 1.0

    @pytest.mark.parametrize(
        "K0,Km1,expected,tol",
        [
            # printed to four decimals, so agreement is to the last printed digit
            ([[210.7583, 23.5416], [23.5416, 8.6450]], [[125.7501, 37.7803], [17.7389, 5.3788]],
             [[0.1559, 3.9456], [0.0211, 0.5648]], 1e-4),
            # quartic inputs are printed to 2-3 significant digits, hence the looser tolerance
            ([[8.0302e5, 0.0868e5], [0.0868e5, 0.0052e5]], [[4.1597e5, 0.1755e5], [0.0594e5, 0.0025e5]],
             [[0.1843, 30.8922], [0.0027, 0.4386]], 0.02),
        ],
    )
    def test_published_typical_realization(self, K0, Km1, expected, tol):
        ks = LaggedKernelSet.from_nonnegative([np.array(K0), np.array(Km1).T], 512)
        A = solve_tls(assemble_yw(ks, 1))[0]
        np.testing.assert_allclose(A, expected, rtol=tol, atol=1.5e-4 if tol < 0.01 else 1e-3)

import numpy as np
import pytest

from fbsdej.errors import ParameterDomainError, SingularityError
from fbsdej.lq_benchmark import (
    LQParams,
    alpha_bar,
    alpha_bar_diagnostics,
    b_path,
    phi_bar,
    price_bar,
    psi_bar,
    riccati_rk4,
    s_bar,
    step2_node_solution,
    tabulate_solution,
)

TANH_CASE = LQParams(p1=0.0, k=1.0, c=0.0, a2=1.0, b2=0.0)  # scale exactly 1


class TestPhi:
    def test_terminal_value_exact(self):
        for params in (LQParams(), TANH_CASE, LQParams(a2=0.0, b2=1.0)):
            assert phi_bar(params.horizon, params) == params.b2

    def test_tanh_reduction(self):
        assert phi_bar(0.0, TANH_CASE) == pytest.approx(np.tanh(1.0), abs=1e-14)

    def test_degenerate_branch(self):
        params = LQParams(a2=0.0, b2=1.0, p1=0.0, k=1.0, c=0.0)
        assert phi_bar(0.0, params) == pytest.approx(0.5, abs=1e-15)

    def test_rk4_cross_check_tanh(self):
        ts, vals = riccati_rk4(TANH_CASE, 1000)
        assert np.abs(vals - phi_bar(ts, TANH_CASE)).max() <= 1e-10

    def test_rk4_cross_check_degenerate(self):
        params = LQParams(a2=0.0, b2=1.0, p1=0.0, k=1.0, c=0.0)
        ts, vals = riccati_rk4(params, 1000)
        assert np.abs(vals - phi_bar(ts, params)).max() <= 1e-10

    def test_stationary_point(self):
        # b2 at the equilibrium sqrt(a2/scale) freezes the flow
        params = LQParams(p1=0.0, k=1.0, c=0.0, a2=1.0, b2=1.0)
        ts, vals = riccati_rk4(params, 1000)
        assert np.abs(vals - 1.0).max() <= 1e-10
        assert np.abs(np.asarray(phi_bar(ts, params)) - 1.0).max() <= 1e-12

    def test_invalid_branch_refused(self):
        bad = LQParams(k=0.2, c=-0.1, p1=0.5, a2=-1.0)  # a2 * scale < 0
        with pytest.raises(ParameterDomainError):
            phi_bar(0.0, bad)

    def test_riccati_residual_by_finite_differences(self):
        params = LQParams()
        h = 1e-4
        ts = np.linspace(0.0, params.horizon, 1000)
        scale = params.step1_scale
        slope = (np.asarray(phi_bar(ts + h, params)) - np.asarray(phi_bar(ts - h, params))) / (2 * h)
        resid = slope - scale * np.asarray(phi_bar(ts, params)) ** 2 + params.a2
        assert np.abs(resid).max() <= 1e-4


class TestBPath:
    def test_zero_paths(self):
        params = LQParams(q0_path=0.0, qbar_path=0.0)
        assert b_path(0.3, params) == params.p0

    def test_plugin(self):
        params = LQParams(p0=1.0, p1=0.5, k=1.0, q0_path=2.0, qbar_path=1.0)
        assert b_path(0.0, params) == pytest.approx(1.0 - 1.0 - 1.5)

    def test_all_zero(self):
        params = LQParams(p0=0.0, p1=0.0, k=1.0, q0_path=0.0, qbar_path=0.0)
        assert b_path(0.5, params) == 0.0


class TestPrice:
    def test_reduces_to_b_when_a1_zero(self):
        params = LQParams(a1=0.0)
        assert price_bar(0.4, params) == pytest.approx(b_path(0.4, params))

    def test_plugin_constant_phi(self):
        params = LQParams(a1=-1.0, p0=0.0, p1=0.0, k=1.0, c=0.0, q0_path=0.0, qbar_path=0.0)
        # scale 1, phi == 1, b == 0 -> price 1
        assert price_bar(0.0, params, phi=lambda u: np.ones_like(np.asarray(u, float))) == pytest.approx(1.0)

    def test_plugin_half_phi(self):
        params = LQParams(a1=-1.0, p0=3.0, p1=0.0, k=0.5, c=0.0, q0_path=0.0, qbar_path=0.0)
        # scale 2, phi = 0.5 -> a1 term 1; b = 3
        got = price_bar(0.0, params, phi=lambda u: np.full_like(np.asarray(u, float), 0.5))
        assert got == pytest.approx(4.0)

    def test_vanishing_phi_refused(self):
        params = LQParams(a1=-1.0)
        with pytest.raises(SingularityError):
            price_bar(0.0, params, phi=lambda u: np.zeros_like(np.asarray(u, float)))


class TestIntercept:
    def test_terminal_value_exact(self):
        assert psi_bar(LQParams().horizon, LQParams()) == -LQParams().b1

    def test_zero_phi_freezes_intercept(self):
        params = LQParams(a1=0.0)
        zero_phi = lambda u: np.zeros_like(np.asarray(u, float))
        got = psi_bar(0.3, params, phi=zero_phi)
        assert got == pytest.approx(-params.b1, abs=1e-14)

    def test_constant_coefficients_closed_form(self):
        params = LQParams()
        phi0, c = 0.8, 1.3
        scale = params.step1_scale
        phis = lambda u: np.full_like(np.asarray(u, float), phi0)
        price = lambda u: np.full_like(np.asarray(u, float), c)
        for t in (0.0, 0.25, 0.8):
            tau = params.horizon - t
            expected = -params.b1 * np.exp(-scale * phi0 * tau) - c * (1 - np.exp(-scale * phi0 * tau))
            assert psi_bar(t, params, phi=phis, price=price) == pytest.approx(expected, abs=1e-8)


class TestStorage:
    def test_starts_at_zero(self):
        assert s_bar(0.0, LQParams()) == 0.0

    def test_zero_integrand(self):
        params = LQParams(a1=0.0)
        psi = lambda u: -np.asarray(price_bar(u, params), dtype=float)
        # price + psi == 0 and a1 == 0: the integrand vanishes identically
        for t in (0.2, 0.7, 1.0):
            assert s_bar(t, params, psi=lambda u: float(psi(u))) == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_exponent(self):
        params = LQParams(a1=0.0)
        scale = params.step1_scale
        c = 1.3
        got = s_bar(
            0.7,
            params,
            phi=lambda u: np.zeros_like(np.asarray(u, float)),
            price=lambda u: np.full_like(np.asarray(u, float), c),
            psi=lambda u: 0.0,
        )
        assert got == pytest.approx(-scale * c * 0.7, abs=1e-12)


class TestControlConsistency:
    def test_two_forms_agree(self):
        diag = alpha_bar_diagnostics(0.5, LQParams())
        assert diag["form_gap"] <= 1e-10

    def test_slope_matches_control(self):
        params = LQParams()
        for t in (0.15, 0.5, 0.85):
            diag = alpha_bar_diagnostics(t, params)
            assert diag["slope_gap"] <= 1e-4

    def test_control_vanishes_when_value_cancels_drift(self):
        params = LQParams()
        # directly check the expression at a synthetic value level
        t = 0.4
        b_val = b_path(t, params)
        assert -params.step1_scale * (-b_val + b_val) == 0.0


class TestTabulation:
    def test_matches_pointwise_operations(self):
        params = LQParams()
        sol = tabulate_solution(params, 51)
        for i in (0, 13, 37, 50):
            t = float(sol.times[i])
            assert sol.psi[i] == pytest.approx(psi_bar(t, params), abs=1e-10)
            assert sol.storage[i] == pytest.approx(s_bar(t, params), abs=1e-10)

    def test_terminal_identities(self):
        params = LQParams()
        sol = tabulate_solution(params, 101)
        assert sol.psi[-1] == pytest.approx(-params.b1, abs=1e-12)
        assert sol.storage[0] == 0.0
        terminal_value = params.b2 * sol.storage[-1] - params.b1
        assert sol.value[-1] == pytest.approx(terminal_value, abs=1e-12)


class TestStep2:
    def both_branch_params(self):
        # k + c < 0 for the node branch, k + c + p1 > 0 for the aggregate one
        return LQParams(k=0.5, c=-1.5, p1=1.5, a2=0.5, b2=0.5, a1=-0.3)

    def test_terminal_value(self):
        params = self.both_branch_params()
        node = step2_node_solution(params, s0=0.0, price=lambda u: np.zeros_like(np.asarray(u, float)))
        assert node.phi(params.horizon) == params.b2

    def test_rejects_invalid_branch(self):
        with pytest.raises(ParameterDomainError):
            step2_node_solution(LQParams(), s0=0.0)  # k + c > 0 makes a2*scale < 0

    def test_matches_aggregate_under_identical_scales(self):
        # node scale -1/(k+c) set numerically equal to an aggregate scale 1
        params = LQParams(k=0.5, c=-1.5, p1=1.5, a2=1.0, b2=0.5, a1=-0.5)
        assert params.step2_scale == pytest.approx(1.0)
        agg = LQParams(k=1.0, c=-0.5, p1=0.5, a2=1.0, b2=0.5, a1=-0.5)
        assert agg.step1_scale == pytest.approx(1.0)
        price = lambda u: np.asarray(price_bar(u, agg), dtype=float)
        node = step2_node_solution(params, s0=0.0, price=price)
        for t in (0.0, 0.3, 0.9):
            assert node.phi(t) == pytest.approx(phi_bar(t, agg), abs=1e-12)
            assert node.psi(t) == pytest.approx(psi_bar(t, agg), abs=1e-9)
            assert node.storage(t) == pytest.approx(s_bar(t, agg), abs=1e-8)

    def test_degenerate_exponent_keeps_initial_level(self):
        params = self.both_branch_params()
        node = step2_node_solution(
            params,
            s0=2.0,
            price=lambda u: np.zeros_like(np.asarray(u, float)),
        )
        phi_zero = lambda u: np.zeros_like(np.asarray(u, float))
        from fbsdej.lq_benchmark import _storage_generic

        got = _storage_generic(0.5, 2.0, 0.0, node.scale, phi_zero,
                               lambda u: np.zeros_like(np.asarray(u, float)),
                               lambda u: 0.0, 200, params.horizon)
        assert got == pytest.approx(2.0)

    def test_default_price_uses_aggregate_optimum(self):
        params = self.both_branch_params()
        node = step2_node_solution(params, s0=0.0)
        # smoke: trajectories stay finite and respect the terminal value
        assert np.isfinite(node.storage(params.horizon))
        assert node.phi(params.horizon) == params.b2


class TestOracleSweep:
    def test_random_valid_parameters_match_rk4(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(20):
            params = LQParams(
                p0=float(rng.uniform(0.5, 3.0)),
                p1=float(rng.uniform(0.1, 1.0)),
                a1=float(rng.uniform(-1.0, -0.1)),
                a2=float(rng.uniform(0.2, 2.0)),
                c=float(rng.uniform(-0.4, -0.05)),
                k=float(rng.uniform(0.5, 2.0)),
                b1=float(rng.uniform(-1.0, 2.0)),
                b2=float(rng.uniform(0.1, 1.5)),
                horizon=float(rng.uniform(0.5, 2.0)),
            )
            ts, vals = riccati_rk4(params, 1000)
            gap = float(np.abs(vals - np.asarray(phi_bar(ts, params))).max())
            worst = max(worst, gap)
            assert phi_bar(params.horizon, params) == params.b2
        assert worst <= 1e-8

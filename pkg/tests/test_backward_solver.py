import dataclasses

import numpy as np
import pytest

from fbsdej.backward_solver import (
    BasisSpec,
    SolverIterate,
    fit_conditional,
    l2_distance,
    polynomial_features,
    solve_backward,
)
from fbsdej.coefficients import CoefficientSet, Dims
from fbsdej.errors import RegressionError
from fbsdej.forward_sim import NoiseSpec, TimeGrid, make_ensemble, simulate_forward
from fbsdej.measure import EmpiricalLaw
from fbsdej.random_measure import JumpIntensity


def scalar_coeffs(sigma=1.0, beta=None, terminal=None, driver=None, marks=0):
    dims = Dims(x=1, y=1, w=1, marks=marks)

    def drift(t, x, y, z, k, law):
        return np.zeros_like(x)

    def diffusion(t, x, y, z, k, law):
        return np.full(x.shape + (1,), float(sigma))

    def h(t, x, y, z, k, law):
        return np.zeros_like(y) if driver is None else driver(t, x, y, z, k)

    def g(x, law):
        return x.copy() if terminal is None else terminal(x)

    jump = None
    if marks:
        def jump(t, x, y, z, k, law, e):
            return np.full_like(x, beta(e))

    return CoefficientSet(
        drift=drift, diffusion=diffusion, jump=jump, driver=h, terminal=g, dims=dims,
        initial_law=EmpiricalLaw.point_mass([0.0]),
    )


class TestRegression:
    def test_degree_zero_is_mean(self):
        x = np.linspace(-1, 1, 11)[:, None]
        y = x[:, 0] ** 2
        feats = polynomial_features(x, BasisSpec(degree=0))
        fitted = fit_conditional(feats, y)
        assert np.allclose(fitted, y.mean())

    def test_exact_for_in_span_target(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50, 1))
        target = 2.0 + 3.0 * x[:, 0]
        feats = polynomial_features(x, BasisSpec(degree=1))
        fitted = fit_conditional(feats, target)
        assert np.allclose(fitted, target, atol=1e-12)

    def test_residual_never_grows_with_degree(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(120, 1))
        y = np.sin(2.0 * x[:, 0]) + 0.1 * rng.normal(size=120)
        prev = np.inf
        for degree in range(0, 6):
            feats = polynomial_features(x, BasisSpec(degree=degree))
            fitted = fit_conditional(feats, y)
            resid = float(np.sum((y - fitted) ** 2))
            assert resid <= prev + 1e-10
            prev = resid

    def test_ridge_bump_handles_degenerate_slice(self):
        x = np.full((30, 1), 2.0)  # all particles at the same point
        y = np.full(30, 7.0)
        feats = polynomial_features(x, BasisSpec(degree=2))
        fitted = fit_conditional(feats, y)
        assert np.allclose(fitted, 7.0, atol=1e-6)

    def test_singular_after_bump_raises(self):
        feats = np.zeros((5, 2))  # no intercept, identically zero features
        with pytest.raises(RegressionError):
            fit_conditional(feats, np.ones(5), step=3)

    def test_worker_invariance_bit_exact(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1000, 2))
        y = rng.normal(size=(1000, 3))
        feats = polynomial_features(x, BasisSpec(degree=2))
        a = fit_conditional(feats, y, workers=1)
        b = fit_conditional(feats, y, workers=4)
        assert np.array_equal(a, b)

    def test_conditioning_selector(self):
        x = np.stack([np.linspace(0, 1, 20), np.linspace(5, 6, 20)], axis=1)
        feats = polynomial_features(x, BasisSpec(degree=1, conditioning=(0,)))
        assert feats.shape == (20, 2)
        assert np.allclose(feats[:, 1], x[:, 0])


class TestBackwardInduction:
    def test_constant_terminal_exact(self):
        coeffs = scalar_coeffs(terminal=lambda x: np.full_like(x, 4.5))
        ens = make_ensemble(256, TimeGrid(1.0, 20), NoiseSpec(), master_seed=0)
        sim = simulate_forward(coeffs, None, None, ens)
        it = solve_backward(sim, coeffs, None, BasisSpec(degree=2))
        assert np.abs(it.Y - 4.5).max() == 0.0
        assert np.abs(it.Z).max() == 0.0

    def test_brownian_martingale_representation(self):
        coeffs = scalar_coeffs()
        ens = make_ensemble(10_000, TimeGrid(1.0, 50), NoiseSpec(), master_seed=42)
        sim = simulate_forward(coeffs, None, None, ens)
        it = solve_backward(sim, coeffs, None, BasisSpec(degree=1))
        assert np.abs(it.Z - 1.0).mean() <= 0.05
        assert np.abs(it.Y[:, :-1, 0] - sim.X[:, :-1, 0]).mean() <= 0.05

    def test_jump_martingale_representation(self):
        inten = JumpIntensity([1.0], [2.0])
        coeffs = scalar_coeffs(sigma=0.0, beta=lambda e: e, marks=1)
        ens = make_ensemble(
            10_000, TimeGrid(1.0, 50), NoiseSpec(intensity=inten), master_seed=7
        )
        sim = simulate_forward(coeffs, None, None, ens)
        it = solve_backward(sim, coeffs, None, BasisSpec(degree=1))
        assert np.abs(it.K - 1.0).mean() <= 0.1

    def test_driver_rolls_back_terminal(self):
        # h = -y integrates the value down by a factor close to e^{-T}
        coeffs = scalar_coeffs(
            sigma=0.2,
            terminal=lambda x: np.ones_like(x),
            driver=lambda t, x, y, z, k: -y,
        )
        ens = make_ensemble(4_000, TimeGrid(1.0, 100), NoiseSpec(), master_seed=3)
        sim = simulate_forward(coeffs, None, None, ens)
        it = solve_backward(sim, coeffs, None, BasisSpec(degree=1))
        assert it.Y[:, 0, 0].mean() == pytest.approx(np.exp(-1.0), rel=0.02)

    def test_fitted_value_depends_only_on_slice_state(self):
        # two particles sharing noise through slice i must get identical
        # fitted values at i even though their futures differ
        coeffs = scalar_coeffs()
        grid = TimeGrid(1.0, 10)
        ens = make_ensemble(64, grid, NoiseSpec(), master_seed=11)
        cut = 5
        dw = ens.dW.copy()
        dw[1, :cut, :] = dw[0, :cut, :]  # equal prefix, different future
        ens = dataclasses.replace(ens, dW=dw)
        sim = simulate_forward(coeffs, None, None, ens)
        assert np.array_equal(sim.X[0, : cut + 1], sim.X[1, : cut + 1])
        it = solve_backward(sim, coeffs, None, BasisSpec(degree=2))
        assert it.Y[0, cut, 0] == it.Y[1, cut, 0]


class TestIterateDistance:
    def _iterate(self, n=3, m=4, dy=1, dw=1, marks=1, fill=0.0):
        return SolverIterate(
            Y=np.full((n, m + 1, dy), fill),
            Z=np.full((n, m, dy, dw), fill),
            K=np.full((n, m, dy, marks), fill),
            X=np.full((n, m + 1, 1), fill),
        )

    def _ensemble(self, m=4, marks=True):
        noise = NoiseSpec(intensity=JumpIntensity([1.0], [2.0]) if marks else None)
        return make_ensemble(3, TimeGrid(2.0, m), noise, master_seed=0)

    def test_identical_iterates(self):
        ens = self._ensemble()
        d = l2_distance(self._iterate(), self._iterate(), ens)
        assert d.total == 0.0

    def test_constant_value_shift(self):
        ens = self._ensemble()
        a, b = self._iterate(), self._iterate()
        b = dataclasses.replace(b, Y=b.Y + 1.0)
        d = l2_distance(a, b, ens)
        assert d.y == pytest.approx(2.0)  # horizon T = 2
        assert d.z == d.k == 0.0

    def test_mark_norm_weighted_by_rate(self):
        ens = self._ensemble()
        a, b = self._iterate(), self._iterate()
        b = dataclasses.replace(b, K=b.K + 1.0)
        d = l2_distance(a, b, ens)
        assert d.k == pytest.approx(2.0 * 2.0)  # rate 2 times horizon 2

    def test_terminal_state_gap(self):
        ens = self._ensemble()
        a, b = self._iterate(), self._iterate(fill=0.0)
        x = b.X.copy()
        x[:, -1, :] = 3.0
        b = dataclasses.replace(b, X=x)
        assert l2_distance(a, b, ens).x_terminal == pytest.approx(9.0)

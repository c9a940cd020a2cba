import dataclasses

import numpy as np
import pytest

from fbsdej.coefficients import (
    CoefficientSet,
    Dims,
    LipschitzConstants,
    LipschitzProfile,
    SamplerConfig,
    audit_lipschitz,
    check_h1,
    check_h2,
    contraction_constants_h1,
    contraction_constants_h2,
    monotonicity_operator,
)
from fbsdej.instances import linear_monotone_instance, weak_monotone_instance
from fbsdej.measure import EmpiricalLaw
from fbsdej.random_measure import JumpIntensity


def law2d():
    return EmpiricalLaw(np.array([[0.0, 0.0], [1.0, -1.0]]))


def point(x, y, z, k_vals=()):
    return (
        np.array([x]),
        np.array([y]),
        np.array([[z]]),
        np.array([list(k_vals)]).reshape(1, len(k_vals)),
    )


def constant_coeffs(value=1.0):
    dims = Dims(x=1, y=1, w=1, marks=0)

    def fwd(t, x, y, z, k, law):
        return np.full_like(x, value)

    def diff(t, x, y, z, k, law):
        return np.full(x.shape + (1,), value)

    def drv(t, x, y, z, k, law):
        return np.full_like(y, value)

    def term(x, law):
        return np.full_like(x, value)

    return CoefficientSet(drift=fwd, diffusion=diff, driver=drv, terminal=term, dims=dims)


class TestOperator:
    def test_zero_at_equal_arguments(self):
        coeffs, _ = linear_monotone_instance(mf_drift=0.0)
        u = point(0.7, -0.2, 0.5)
        assert monotonicity_operator(0.1, u, u, law2d(), coeffs) == 0.0

    def test_strongly_monotone_example(self):
        # drift -y, driver -x: operator equals -(dy^2 + dx^2)
        coeffs, _ = linear_monotone_instance(mf_drift=0.0)
        u, up = point(1.0, 0.5, 0.2), point(0.3, -0.1, 0.9)
        val = monotonicity_operator(0.1, u, up, law2d(), coeffs)
        assert val == pytest.approx(-(0.6**2) - (0.7**2))
        assert val <= -(0.7**2)  # decay in the state gap with unit constant

    def test_constant_coefficients_vanish(self):
        coeffs = constant_coeffs(3.0)
        u, up = point(1.0, 2.0, 3.0), point(-1.0, 0.5, 0.0)
        assert monotonicity_operator(0.0, u, up, law2d(), coeffs) == 0.0

    def test_symmetry_under_swap(self):
        # each term is a product of two differences, so swapping u and u'
        # leaves the value unchanged
        coeffs, _ = linear_monotone_instance(mf_drift=0.0)
        rng = np.random.default_rng(5)
        for _ in range(20):
            u = point(*rng.normal(size=3))
            up = point(*rng.normal(size=3))
            a = monotonicity_operator(0.3, u, up, law2d(), coeffs)
            b = monotonicity_operator(0.3, up, u, law2d(), coeffs)
            assert a == pytest.approx(b, abs=1e-14)

    def test_jump_term_weighted_by_rates(self):
        inten = JumpIntensity([1.0], [2.0])
        dims = Dims(x=1, y=1, w=1, marks=1)

        def fwd(t, x, y, z, k, law):
            return np.zeros_like(x)

        def diff(t, x, y, z, k, law):
            return np.zeros(x.shape + (1,))

        def drv(t, x, y, z, k, law):
            return np.zeros_like(y)

        def term(x, law):
            return x.copy()

        def jump(t, x, y, z, k, law, e):
            return k[:, :, 0] * e  # jump coefficient proportional to k

        coeffs = CoefficientSet(
            drift=fwd, diffusion=diff, jump=jump, driver=drv, terminal=term, dims=dims
        )
        u = point(0.0, 0.0, 0.0, (1.0,))
        up = point(0.0, 0.0, 0.0, (0.0,))
        # [beta(u)-beta(u')](k-k') rate = (1*1 - 0)(1 - 0) * 2
        val = monotonicity_operator(0.0, u, up, law2d(), coeffs, inten)
        assert val == pytest.approx(2.0)


class TestChecks:
    def test_h1_passes_on_monotone_instance(self):
        coeffs, consts = linear_monotone_instance()
        report = check_h1(coeffs, consts, SamplerConfig(n_samples=200, seed=4))
        assert report.passed
        assert report.operator_margin <= 0.0
        assert report.terminal_margin >= -1e-12

    def test_h1_fails_with_inflated_decay(self):
        coeffs, consts = linear_monotone_instance()
        bad = dataclasses.replace(consts, operator_decay=10.0)
        assert not check_h1(coeffs, bad, SamplerConfig(seed=4)).passed

    def test_h1_fails_on_sign_reversed_terminal(self):
        coeffs, consts = linear_monotone_instance()
        flipped = dataclasses.replace(coeffs, terminal=lambda x, law: -x)
        assert not check_h1(flipped, consts, SamplerConfig(seed=4)).passed

    def test_h2_passes_on_weak_instance(self):
        coeffs, consts = weak_monotone_instance()
        assert check_h2(coeffs, consts, SamplerConfig(seed=4)).passed

    def test_h2_fails_with_inflated_decay(self):
        coeffs, consts = weak_monotone_instance()
        bad = dataclasses.replace(consts, operator_decay=2.0)
        assert not check_h2(coeffs, bad, SamplerConfig(seed=4)).passed

    def test_h2_fails_on_constant_coefficients(self):
        # operator vanishes but the decay requirement is strict off-diagonal
        coeffs = constant_coeffs()
        consts = LipschitzConstants(operator_decay=0.1, terminal_growth=0.1)
        assert not check_h2(coeffs, consts, SamplerConfig(seed=4)).passed

    def test_injected_counterexample_forces_failure(self):
        # sampling might miss the violation region; an injected sample must not
        coeffs, consts = linear_monotone_instance()
        bad = dataclasses.replace(consts, operator_decay=10.0)
        u = point(1.0, 0.0, 0.0)
        up = point(0.0, 0.0, 0.0)
        sample = (0.0, u, up, law2d())
        report = check_h1(
            coeffs, bad, SamplerConfig(n_samples=1, seed=4), extra_samples=[sample]
        )
        assert not report.passed


class TestContractionH1:
    def test_theta1_unit_terminal_only(self):
        consts = LipschitzConstants(terminal_x=1.0)
        cert = contraction_constants_h1(consts, horizon=3.0)
        assert cert.theta1 == pytest.approx(1.0)

    def test_theta_values_driver_x(self):
        consts = LipschitzConstants(driver=LipschitzProfile(x=1.0), terminal_x=1.0)
        cert = contraction_constants_h1(consts, horizon=1.0)
        assert cert.theta1 == pytest.approx(np.e)
        assert cert.theta2 == pytest.approx(np.e)

    def test_all_zero_constants(self):
        cert = contraction_constants_h1(LipschitzConstants(), horizon=1.0)
        assert cert.theta1 == cert.theta2 == cert.theta1_bar == cert.theta2_bar == 0.0

    def test_linear_instance_certificate_contracts(self):
        _, consts = linear_monotone_instance()
        cert = contraction_constants_h1(consts, horizon=1.0)
        assert cert.valid and cert.ratio < 1.0 and cert.gamma > 0.0

    def test_invalid_certificate_not_raised(self):
        cert = contraction_constants_h1(LipschitzConstants(), horizon=1.0)
        assert not cert.valid  # theta >= gamma, reported rather than raised

    def test_theta_block_monotone_in_constants_and_horizon(self):
        rng = np.random.default_rng(9)
        fields = ["x", "y", "z", "k", "law"]
        for _ in range(20):
            vals = {f: float(v) for f, v in zip(fields, rng.uniform(0.0, 1.5, 5))}
            base = LipschitzConstants(
                driver=LipschitzProfile(**vals),
                terminal_x=float(rng.uniform(0.0, 1.5)),
                terminal_law=float(rng.uniform(0.0, 1.5)),
            )
            horizon = float(rng.uniform(0.2, 2.0))
            ref = contraction_constants_h1(base, horizon)
            for f in fields:
                bumped_vals = dict(vals)
                bumped_vals[f] += 0.3
                bumped = dataclasses.replace(base, driver=LipschitzProfile(**bumped_vals))
                new = contraction_constants_h1(bumped, horizon)
                for name in ("theta1", "theta2", "theta1_bar", "theta2_bar"):
                    assert getattr(new, name) >= getattr(ref, name) - 1e-12
            longer = contraction_constants_h1(base, horizon + 0.5)
            for name in ("theta1", "theta2", "theta1_bar", "theta2_bar"):
                assert getattr(longer, name) >= getattr(ref, name) - 1e-12


class TestContractionH2:
    def test_zero_constants(self):
        cert = contraction_constants_h2(LipschitzConstants(), horizon=1.0)
        assert cert.upsilon1 == cert.upsilon2 == cert.upsilon3 == cert.upsilon4 == 0.0
        # degenerate growth rate: both factors fall back to the horizon
        assert cert.growth_factor == pytest.approx(1.0)
        assert cert.growth_factor_standard == pytest.approx(1.0)
        assert cert.valid

    def test_plugin_values(self):
        c_drift = LipschitzConstants(drift=LipschitzProfile(x=1.0))
        assert contraction_constants_h2(c_drift, 1.0).upsilon1 == pytest.approx(2.0)
        c_diff = LipschitzConstants(diffusion=LipschitzProfile(x=1.0))
        assert contraction_constants_h2(c_diff, 1.0).upsilon1 == pytest.approx(5.0)

    def test_growth_factor_variants(self):
        consts = LipschitzConstants(drift=LipschitzProfile(x=0.5))
        cert = contraction_constants_h2(consts, horizon=1.0)
        u1 = cert.upsilon1
        assert cert.growth_factor == pytest.approx((np.exp(u1) - u1) / u1)
        assert cert.growth_factor_standard == pytest.approx((np.exp(u1) - 1.0) / u1)

    def test_upsilons_monotone(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            profile = {f: float(v) for f, v in zip("xyzk", rng.uniform(0.0, 1.0, 4))}
            base = LipschitzConstants(drift=LipschitzProfile(**profile))
            ref = contraction_constants_h2(base, 1.0)
            bumped = dataclasses.replace(
                base, drift=LipschitzProfile(**{k: v + 0.2 for k, v in profile.items()})
            )
            new = contraction_constants_h2(bumped, 1.0)
            for name in ("upsilon1", "upsilon2", "upsilon3", "upsilon4"):
                assert getattr(new, name) >= getattr(ref, name) - 1e-12

    def test_law_coupling_defeats_thresholds(self):
        consts = LipschitzConstants(
            drift=LipschitzProfile(law=2.0),
            driver=LipschitzProfile(law=2.0),
            operator_decay=0.1,
        )
        assert not contraction_constants_h2(consts, 1.0).valid


class TestAudit:
    def test_observed_quotients_within_declared(self):
        coeffs, consts = linear_monotone_instance()
        report = audit_lipschitz(coeffs, consts, SamplerConfig(n_samples=60, seed=3))
        for profile in report.values():
            for observed, declared in profile.values():
                assert observed <= declared + 1e-9

    def test_underdeclared_constant_detected(self):
        coeffs, consts = linear_monotone_instance()
        lying = dataclasses.replace(consts, drift=LipschitzProfile(y=0.1))
        report = audit_lipschitz(coeffs, lying, SamplerConfig(n_samples=60, seed=3))
        observed, declared = report["drift"]["y"]
        assert observed > declared

"""Coefficient bundles, noise spectra, and the structural condition checker."""

import dataclasses

import numpy as np
import pytest

from slowfast_burgers.model import (LAMBDA_1, Multiplier, NoiseSpec,
                                    PairMap, ScaleParams, check_conditions,
                                    hilbert_schmidt_norm, preset,
                                    stability_margin)

PI = np.pi


class TestNoiseSpec:
    def test_power_decay_default(self):
        ns = NoiseSpec.power_decay(16)
        assert ns.q1[0] == 1.0
        assert ns.q1[3] == pytest.approx(1 / 16)
        assert ns.trace("q1") < 2.0  # bounded by p/(p-1) = 2

    def test_trace_class_certificate(self):
        with pytest.raises(ValueError, match="trace class"):
            NoiseSpec.power_decay(16, exponent=1.0)

    def test_flat_trace(self):
        ns = NoiseSpec.flat(12, scale1=0.5)
        assert ns.trace("q1") == pytest.approx(6.0)
        assert ns.trace("q2") == pytest.approx(12.0)

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(q1=np.array([1.0, -0.1]), q2=np.ones(2))

    def test_hs_norm_formula(self):
        q = np.array([1.0, 0.25, 1 / 9])
        assert hilbert_schmidt_norm(2.0, q) == pytest.approx(2 * np.sqrt(q.sum()))


class TestScaleParams:
    def test_delta_from_exponent(self):
        s = ScaleParams(0.1, 2.0)
        assert s.delta == pytest.approx(0.01)
        assert s.khasminskii_delta == pytest.approx(0.1)

    def test_exponent_must_separate_scales(self):
        with pytest.raises(ValueError):
            ScaleParams(0.1, 1.0)

    def test_zero_epsilon_needs_explicit_delta(self):
        with pytest.raises(ValueError):
            ScaleParams(0.0)
        s = ScaleParams(0.0, delta_override=1e-3)
        assert s.delta == 1e-3

    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            ScaleParams(1.5)


class TestStabilityCondition:
    def test_trivial_zero_constants(self):
        gap, margin = stability_margin(0.0, 0.0)
        assert gap > 0 and margin > 0

    def test_gap_closed_at_first_eigenvalue(self):
        gap, margin = stability_margin(PI ** 2, 0.0)
        assert gap == 0.0 and margin == -np.inf

    def test_direct_arithmetic_case(self):
        # L_g = 1, L_sigma2 = 2: 4/pi^2 + 1/(pi^2 - 1) ~ 0.518 < 1
        gap, margin = stability_margin(1.0, 2.0)
        expected = 1.0 - (4.0 / PI ** 2 + 1.0 / (PI ** 2 - 1.0))
        assert gap == pytest.approx(PI ** 2 - 1.0)
        assert margin == pytest.approx(expected)
        assert margin > 0
        coeffs, noise = preset("linear_ou", 8)
        coeffs = dataclasses.replace(coeffs, L_g=1.0, L_sigma2=2.0)
        report = check_conditions(coeffs, noise, n_samples=10)
        assert report.a3_holds


class TestPresets:
    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown preset"):
            preset("nope")

    def test_linear_ou_averaged_drift(self):
        coeffs, _ = preset("linear_ou", 8)
        lam = (np.arange(1, 9) * PI) ** 2
        e1 = np.zeros(8)
        e1[0] = 1.0
        fbar = coeffs.fbar_closed_form(e1, lam)
        assert fbar[0] == pytest.approx(1.0 / PI ** 2)
        assert fbar[0] == pytest.approx(0.101321, rel=1e-4)
        assert not fbar[1:].any()

    def test_decoupled_drift_vanishes(self):
        coeffs, _ = preset("decoupled_small_noise", 4)
        lam = (np.arange(1, 5) * PI) ** 2
        assert not coeffs.fbar_closed_form(np.ones(4), lam).any()

    def test_linear_ou_satisfies_stability(self):
        coeffs, noise = preset("linear_ou", 8)
        report = check_conditions(coeffs, noise, n_samples=100)
        assert report.a3_holds
        assert not report.violations

    @pytest.mark.parametrize("name", ["linear_ou", "lipschitz_saturating",
                                      "decoupled_small_noise"])
    def test_declared_constants_hold(self, name):
        coeffs, noise = preset(name, 16)
        report = check_conditions(coeffs, noise, n_samples=10000, seed=3)
        assert not report.violations, report.violations
        assert report.a3_holds
        # growth bound witness stays below its declared constant
        assert report.a2_witness <= coeffs.growth_c * 1.01 + 1e-12

    def test_custom_noise_rescales_constants(self):
        flat = NoiseSpec.flat(8)
        coeffs, noise = preset("linear_ou", 8, noise=flat)
        assert noise is flat
        assert coeffs.growth_c == pytest.approx(np.sqrt(8.0))

    def test_noise_length_checked(self):
        with pytest.raises(ValueError):
            preset("linear_ou", 8, noise=NoiseSpec.flat(4))


class TestConditionChecker:
    def test_violation_reported_not_raised(self):
        coeffs, noise = preset("linear_ou", 8)
        lying = dataclasses.replace(coeffs, L_f=0.4)  # true constant is 1
        report = check_conditions(lying, noise, n_samples=500)
        assert any(v.startswith("f:") for v in report.violations)
        assert not report.ok

    def test_margins_reported(self):
        coeffs, noise = preset("linear_ou", 8)
        report = check_conditions(coeffs, noise, n_samples=10)
        assert report.margins["eigenvalue_gap"] == pytest.approx(LAMBDA_1)
        assert 0 < report.margins["stability_margin"] <= 1


class TestDescriptors:
    def test_pair_map_kinds(self):
        x, y = np.array([1.0, -2.0]), np.array([0.5, 0.25])
        assert not PairMap("zero")(x, y).any()
        np.testing.assert_allclose(PairMap("linear", ax=2, ay=-1)(x, y),
                                   2 * x - y)
        np.testing.assert_allclose(PairMap("tanh", ax=1, ay=1)(x, y),
                                   np.tanh(x) + np.tanh(y))
        with pytest.raises(ValueError):
            PairMap("cubic")

    def test_pair_map_broadcasts_over_paths(self):
        x = np.array([1.0, 2.0])
        ys = np.ones((5, 2))
        out = PairMap("linear", ax=1.0, ay=1.0)(x, ys)
        assert out.shape == (5, 2)

    def test_multiplier_norm_dependence(self):
        m = Multiplier(1.0, cx=0.5)
        x = np.array([3.0, 4.0])   # |x| = 5
        assert m(x) == pytest.approx(1.0 + 0.5 * np.tanh(5.0))
        m2 = Multiplier(1.0, cy=0.5)
        with pytest.raises(ValueError):
            m2(x)   # needs the second argument

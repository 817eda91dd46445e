"""Multirate stochastic integrator: scheme reductions, shared noise,
determinism, guards, and the coupled-system oracles."""

import dataclasses

import numpy as np
import pytest

from slowfast_burgers import (BlowUpError, Control, ScaleParams, SpectralBasis,
                              TimeGrid, default_guard_radius, preset, rng_for,
                              simulate_auxiliary, simulate_controlled,
                              simulate_pair, step_coupled)
from slowfast_burgers.integrator import draw_noise
from slowfast_burgers.model import PairMap

PI = np.pi


class TestTimeGrid:
    def test_build_resolves_fast_scale(self):
        scales = ScaleParams(0.1)   # delta = 0.01
        grid = TimeGrid.build(1.0, 256, scales)
        assert grid.dt_fast <= scales.delta / 10 + 1e-15
        assert grid.khasminskii_delta >= grid.dt
        assert grid.block_steps == round(scales.khasminskii_delta / grid.dt)

    def test_dt_divides_horizon(self):
        grid = TimeGrid(2.0, 512)
        assert grid.n_steps * grid.dt == pytest.approx(2.0, rel=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 0)
        with pytest.raises(ValueError):
            TimeGrid(1.0, 16, n_substeps=0)


class TestControl:
    def test_energy_and_bound(self):
        # per knot |u|^2 = 2 modes * 4 = 8, integrated over [0, 1]
        u = Control(np.full((4, 2), 2.0), horizon=1.0)
        assert u.l2_norm_sq() == pytest.approx(8.0)
        Control(np.full((4, 2), 2.0), horizon=1.0, bound=8.0)
        with pytest.raises(ValueError, match="exceeds bound"):
            Control(np.full((4, 2), 2.0), horizon=1.0, bound=7.9)

    def test_grid_expansion(self):
        u = Control(np.array([[1.0], [2.0]]), horizon=1.0)
        grid = TimeGrid(1.0, 8)
        vals = u.on_grid(grid, 3)
        assert vals.shape == (8, 3)
        np.testing.assert_array_equal(vals[:4, 0], 1.0)
        np.testing.assert_array_equal(vals[4:, 0], 2.0)
        assert not vals[:, 1:].any()

    def test_horizon_mismatch(self):
        u = Control.zero(1.0, 2)
        with pytest.raises(ValueError, match="horizon"):
            u.on_grid(TimeGrid(2.0, 8), 2)


class TestSchemeReductions:
    def test_pure_semigroup_no_noise_no_coupling(self):
        # eps = 0, f = 0, one mode: the slow path is the exact heat flow
        basis = SpectralBasis(1)
        coeffs, noise = preset("decoupled_small_noise", 1)
        scales = ScaleParams(0.0, delta_override=1e-2)
        grid = TimeGrid.build(1.0, 128, scales)
        tp = simulate_pair(basis.unit_mode(1), basis.zero(), coeffs, noise,
                           scales, grid, seed=0, basis=basis)
        np.testing.assert_allclose(tp.X[:, 0], np.exp(-PI ** 2 * tp.times),
                                   rtol=1e-13, atol=1e-15)

    def test_zero_is_a_fixed_point(self):
        basis = SpectralBasis(4)
        coeffs, noise = preset("linear_ou", 4)
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(0.5, 8, scales)
        x, y = basis.zero(), basis.zero()
        for _ in range(8):
            x, y = step_coupled(x, y, coeffs, noise, scales, grid,
                                np.zeros((grid.n_substeps, 4)), basis=basis)
        assert not x.any() and not y.any()

    def test_single_point_path_at_zero_horizon(self):
        basis = SpectralBasis(2)
        coeffs, noise = preset("linear_ou", 2)
        tp = simulate_pair(basis.unit_mode(1), basis.unit_mode(2), coeffs,
                           noise, ScaleParams(0.1), TimeGrid(0.0, 0),
                           seed=0, basis=basis)
        assert tp.X.shape == (1, 2)
        np.testing.assert_array_equal(tp.X[0], basis.unit_mode(1))
        np.testing.assert_array_equal(tp.Y[0], basis.unit_mode(2))

    def test_initial_condition_preserved(self):
        basis = SpectralBasis(4)
        coeffs, noise = preset("linear_ou", 4)
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(0.25, 16, scales)
        x0, y0 = 0.7 * basis.unit_mode(2), 0.4 * basis.unit_mode(1)
        tp = simulate_pair(x0, y0, coeffs, noise, scales, grid, seed=5,
                           basis=basis)
        np.testing.assert_array_equal(tp.X[0], x0)
        np.testing.assert_array_equal(tp.Y[0], y0)


class TestDeterminismAndSharedNoise:
    def test_identical_seeds_identical_paths(self):
        basis = SpectralBasis(8)
        coeffs, noise = preset("lipschitz_saturating", 8)
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(0.5, 64, scales)
        a = simulate_pair(basis.unit_mode(1), basis.zero(), coeffs, noise,
                          scales, grid, seed=21, basis=basis)
        b = simulate_pair(basis.unit_mode(1), basis.zero(), coeffs, noise,
                          scales, grid, seed=21, basis=basis)
        assert a.X.tobytes() == b.X.tobytes()
        assert a.Y.tobytes() == b.Y.tobytes()

    def test_distinct_indices_are_independent_streams(self):
        r0 = rng_for(3, 0).standard_normal(4)
        r1 = rng_for(3, 1).standard_normal(4)
        assert not np.allclose(r0, r1)
        np.testing.assert_array_equal(r0, rng_for(3, 0).standard_normal(4))

    def test_simulation_equals_chained_steps(self):
        # the batched kernel consumes exactly the draws that the single-step
        # surface consumes: slow and fast equations read one shared W
        basis = SpectralBasis(4)
        coeffs, noise = preset("linear_ou", 4)
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(0.25, 16, scales)
        x0, y0 = 0.5 * basis.unit_mode(1), basis.zero()
        tp = simulate_pair(x0, y0, coeffs, noise, scales, grid, seed=33,
                           basis=basis)
        xi = draw_noise(rng_for(33), grid, 4)
        x, y = x0.copy(), y0.copy()
        for i in range(grid.n_steps):
            x, y = step_coupled(x, y, coeffs, noise, scales, grid, xi[i],
                                basis=basis)
        np.testing.assert_allclose(x, tp.X[-1], rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(y, tp.Y[-1], rtol=1e-12, atol=1e-15)

    def test_slow_increment_is_sum_of_substeps(self):
        basis = SpectralBasis(4)
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(0.25, 16, scales)
        coeffs, noise = preset("linear_ou", 4)
        tp = simulate_pair(basis.unit_mode(1), basis.zero(), coeffs, noise,
                           scales, grid, seed=8, keep_increments=True,
                           basis=basis)
        xi = draw_noise(rng_for(8), grid, 4)
        np.testing.assert_allclose(tp.slow_normals,
                                   xi.sum(axis=1) / np.sqrt(grid.n_substeps),
                                   rtol=1e-15)


class TestStationaryOracle:
    def test_fast_mode_variance(self):
        # one mode, delta = 1e-3: the fast marginal is an OU process whose
        # stationary variance is q / (2 lam)
        basis = SpectralBasis(1)
        coeffs, noise = preset("linear_ou", 1)
        scales = ScaleParams(0.1, delta_override=1e-3)
        grid = TimeGrid.build(4.0, 4096, scales)
        assert grid.n_steps * grid.n_substeps >= 10 ** 4
        tp = simulate_pair(basis.zero(), basis.zero(), coeffs, noise, scales,
                           grid, seed=3, basis=basis)
        var = tp.Y[400:, 0].var()
        oracle = noise.q2[0] / (2 * PI ** 2)
        assert var == pytest.approx(oracle, rel=0.10)


class TestControlledRuns:
    def test_zero_control_matches_uncontrolled(self):
        basis = SpectralBasis(4)
        coeffs, noise = preset("linear_ou", 4)
        scales = ScaleParams(0.05)
        grid = TimeGrid.build(0.5, 64, scales)
        plain = simulate_pair(basis.unit_mode(1), basis.zero(), coeffs, noise,
                              scales, grid, seed=17, basis=basis)
        ctl = simulate_controlled(basis.unit_mode(1), basis.zero(), coeffs,
                                  noise, scales, grid, Control.zero(0.5, 4),
                                  seed=17, basis=basis)
        assert plain.X.tobytes() == ctl.X.tobytes()
        assert plain.Y.tobytes() == ctl.Y.tobytes()

    def test_constant_control_matches_linear_ode(self):
        # noise zeroed through the draws, one mode, eps = delta = 1:
        # x' = -lam x + sqrt(q) u has the variation-of-constants solution
        basis = SpectralBasis(1)
        coeffs, noise = preset("decoupled_small_noise", 1)
        scales = ScaleParams(1.0, delta_override=1.0)
        grid = TimeGrid.build(1.0, 64, scales)
        u_val = 2.0
        x, y = 0.3 * basis.unit_mode(1), basis.zero()
        for _ in range(grid.n_steps):
            x, y = step_coupled(x, y, coeffs, noise, scales, grid,
                                np.zeros((grid.n_substeps, 1)),
                                control_value=np.array([u_val]), basis=basis)
        lam = PI ** 2
        sq = np.sqrt(noise.q1[0])
        expected = (np.exp(-lam) * 0.3 + sq * u_val * (1 - np.exp(-lam)) / lam)
        assert x[0] == pytest.approx(expected, rel=1e-13)

    def test_controlled_requires_positive_epsilon(self):
        basis = SpectralBasis(2)
        coeffs, noise = preset("linear_ou", 2)
        scales = ScaleParams(0.0, delta_override=1e-2)
        grid = TimeGrid.build(0.25, 8, scales)
        with pytest.raises(ValueError, match="epsilon > 0"):
            simulate_controlled(basis.zero(), basis.zero(), coeffs, noise,
                                scales, grid, Control.zero(0.25, 2), seed=0,
                                basis=basis)


class TestAuxiliaryProcesses:
    def test_uncoupled_fast_processes_coincide(self):
        # g and sigma2 free of the slow argument and no control: the
        # controlled fast path and the auxiliary fast path solve the same
        # equation under the same draws
        basis = SpectralBasis(4)
        coeffs, noise = preset("decoupled_small_noise", 4)
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(0.25, 32, scales)
        aux = simulate_auxiliary(basis.unit_mode(1), 0.2 * basis.unit_mode(2),
                                 coeffs, noise, scales, grid, None, seed=9,
                                 basis=basis)
        np.testing.assert_array_equal(aux.Y_hat, aux.paired.Y)

    def test_noise_free_slow_auxiliary_is_deterministic_flow(self):
        # f = 0 and no control: the slow auxiliary is the deterministic
        # advection-diffusion flow, independent of the seed
        basis = SpectralBasis(8)
        coeffs, noise = preset("decoupled_small_noise", 8)
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(0.25, 32, scales)
        x0 = 0.8 * basis.unit_mode(1)
        a = simulate_auxiliary(x0, basis.zero(), coeffs, noise, scales, grid,
                               None, seed=1, basis=basis)
        b = simulate_auxiliary(x0, basis.zero(), coeffs, noise, scales, grid,
                               None, seed=2, basis=basis)
        np.testing.assert_array_equal(a.X_hat, b.X_hat)
        assert np.abs(a.X_hat[-1]).max() > 0

    def test_finest_blocks_track_the_path(self):
        # with one-step blocks the frozen argument is the controlled path
        # itself, so the fast gap shrinks as the block size drops
        basis = SpectralBasis(4)
        coeffs, noise = preset("linear_ou", 4)
        scales = ScaleParams(0.1)
        base = TimeGrid.build(0.5, 64, scales)
        gaps = {}
        for blk in (16, 1):
            grid = TimeGrid(0.5, 64, n_substeps=base.n_substeps,
                            block_steps=blk)
            aux = simulate_auxiliary(0.5 * basis.unit_mode(1), basis.zero(),
                                     coeffs, noise, scales, grid, None,
                                     seed=4, basis=basis)
            d = aux.paired.Y - aux.Y_hat
            gaps[blk] = float(np.sqrt((d * d).sum(axis=1)).max())
        assert gaps[1] < 0.5 * gaps[16]


class TestGuardsAndBlowUp:
    def _unstable_model(self):
        coeffs, noise = preset("linear_ou", 2)
        # linear instability far above the spectral gap overwhelms the decay
        f = PairMap("linear", ax=900.0, ay=0.0)
        return dataclasses.replace(coeffs, f=f, L_f=900.0), noise

    def test_blow_up_raises_without_guard(self):
        basis = SpectralBasis(2)
        coeffs, noise = self._unstable_model()
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(2.0, 512, scales)
        with pytest.raises(BlowUpError) as info:
            simulate_pair(basis.unit_mode(1), basis.zero(), coeffs, noise,
                          scales, grid, seed=0, basis=basis)
        assert info.value.last_index >= 0

    def test_guard_truncates_instead(self):
        basis = SpectralBasis(2)
        coeffs, noise = self._unstable_model()
        scales = ScaleParams(0.1)
        grid = TimeGrid.build(2.0, 512, scales)
        radius = default_guard_radius(basis.unit_mode(1), basis.zero())
        tp = simulate_pair(basis.unit_mode(1), basis.zero(), coeffs, noise,
                           scales, grid, seed=0, guard_radius=radius,
                           basis=basis)
        cut = tp.truncation_index()
        assert 0 < cut < grid.n_steps
        assert np.isfinite(tp.abs_x_sq[:cut]).all()

    def test_default_guard_radius(self):
        x = np.array([3.0, 4.0])
        y = np.array([0.0, 0.0])
        assert default_guard_radius(x, y) == pytest.approx(60.0)


class TestMomentBounds:
    def test_energy_grows_at_most_linearly_in_initial_data(self):
        # witness for the uniform second-moment bound: the ratio
        # E[sup |X|^2 + int ||X||^2] / (1 + |x|^2 + |y|^2) stays stable
        # across initial-data scalings and epsilon
        basis = SpectralBasis(8)
        coeffs, noise = preset("linear_ou", 8)
        ratios = []
        for eps in (0.1, 0.05, 0.01):
            scales = ScaleParams(eps)
            grid = TimeGrid.build(0.5, 128, scales)
            for amp in (0.5, 2.0):
                x0 = amp * basis.unit_mode(1)
                y0 = amp * basis.unit_mode(2)
                acc = 0.0
                for i in range(40):
                    tp = simulate_pair(x0, y0, coeffs, noise, scales, grid,
                                       seed=(100, i), basis=basis)
                    acc += tp.abs_x_sq.max() \
                        + tp.norm_x_sq[:-1].sum() * grid.dt \
                        + tp.Y[:-1].__pow__(2).sum() * grid.dt / 8
                    denom = 1 + x0 @ x0 + y0 @ y0
                ratios.append(acc / 40 / denom)
        ratios = np.array(ratios)
        assert np.isfinite(ratios).all()
        assert ratios.max() / ratios.min() < 5.0

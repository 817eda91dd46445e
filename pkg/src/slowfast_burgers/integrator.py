"""Multirate stochastic time stepping for the coupled slow-fast system.

The slow equation advances by an exponential Euler step of size dt (exact
linear part, variation-of-constants drift weight, exact stochastic-convolution
noise variance); the fast equation is substepped inside each slow step with
the slow field frozen, at ``dt_fast <= delta * fast_ratio``.  One cylindrical
Wiener process drives both equations: the fast substeps consume per-substep
standard normals and the slow step consumes their normalized sum, so the slow
increment is by construction the sum of its substeps' increments.

Trajectories are deterministic given (seed, config); distinct trajectories
use independent streams derived from (master seed, index).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .basis import SpectralBasis
from .model import ScaleParams, stability_margin

__all__ = [
    "TimeGrid", "Control", "TrajectoryPair", "AuxiliaryPair", "BlowUpError",
    "simulate_pair", "simulate_controlled", "simulate_auxiliary",
    "step_coupled", "rng_for", "default_guard_radius",
]


class BlowUpError(RuntimeError):
    """State left the finite range before the horizon."""

    def __init__(self, message, last_index, time):
        super().__init__(message)
        self.last_index = last_index
        self.time = time


def rng_for(seed, index=None):
    """Deterministic generator for (master seed, trajectory index).

    ``seed`` is an int, a flat tuple of ints, or a SeedSequence; ``index``
    extends the spawn key, so distinct indices give independent streams.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    elif isinstance(seed, (tuple, list)):
        ss = np.random.SeedSequence([int(s) for s in seed])
    else:
        ss = np.random.SeedSequence(int(seed))
    if index is not None:
        if not isinstance(index, (tuple, list)):
            index = (index,)
        ss = np.random.SeedSequence(entropy=ss.entropy,
                                    spawn_key=tuple(ss.spawn_key)
                                    + tuple(int(i) for i in index))
    return np.random.default_rng(ss)


def default_guard_radius(x, y):
    """Stopping radius tied to the initial data, 10*(1 + |x| + |y|)."""
    return 10.0 * (1.0 + float(np.linalg.norm(x)) + float(np.linalg.norm(y)))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform slow grid with fast substepping and Khasminskii blocks.

    ``dt`` divides the horizon by construction; the block size is
    ``block_steps * dt`` (the delta**(1/2) block rounded to the grid) and the
    fast substep is ``dt / n_substeps``.
    """

    horizon: float
    n_steps: int
    n_substeps: int = 1
    block_steps: int = 1

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.n_steps < 0 or (self.horizon > 0 and self.n_steps < 1):
            raise ValueError("need at least one step for a positive horizon")
        if self.n_substeps < 1 or self.block_steps < 1:
            raise ValueError("substep and block counts must be positive")

    @classmethod
    def build(cls, horizon, n_steps, scales=None, fast_ratio=0.1):
        """Grid resolving the fast scale of ``scales`` (dt_fast <= delta/10)."""
        if scales is None or horizon == 0:
            return cls(horizon, n_steps)
        dt = horizon / n_steps
        n_sub = max(1, math.ceil(dt / (scales.delta * fast_ratio)))
        blk = max(1, round(scales.khasminskii_delta / dt))
        return cls(horizon, n_steps, n_substeps=n_sub, block_steps=blk)

    @property
    def dt(self):
        return self.horizon / self.n_steps if self.n_steps else 0.0

    @property
    def dt_fast(self):
        return self.dt / self.n_substeps

    @property
    def khasminskii_delta(self):
        return self.block_steps * self.dt

    @property
    def times(self):
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class Control:
    """Piecewise-constant control on uniform knots over [0, horizon].

    ``bound`` declares the energy budget N with ``int |u|^2 ds <= N``;
    construction verifies membership.
    """

    values: np.ndarray           # (n_knots, n_modes)
    horizon: float
    bound: Optional[float] = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "values", v)
        if self.horizon <= 0:
            raise ValueError("control horizon must be positive")
        if self.bound is not None and self.l2_norm_sq() > self.bound * (1 + 1e-12):
            raise ValueError(
                f"control energy {self.l2_norm_sq():.6g} exceeds bound {self.bound}")

    @property
    def n_knots(self):
        return self.values.shape[0]

    @property
    def n_modes(self):
        return self.values.shape[1]

    def l2_norm_sq(self):
        """Discrete squared L2 norm, sum |u_c|^2 * (T / K)."""
        dt_knot = self.horizon / self.n_knots
        return float(np.sum(self.values * self.values) * dt_knot)

    def on_grid(self, grid, n_modes):
        """Expand to per-step values (n_steps, n_modes) on a slow grid."""
        if abs(grid.horizon - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ValueError("control horizon does not match the grid")
        out = np.zeros((grid.n_steps, n_modes))
        cols = min(n_modes, self.n_modes)
        idx = (np.arange(grid.n_steps) * self.n_knots) // grid.n_steps
        out[:, :cols] = self.values[idx, :cols]
        return out

    def scaled(self, factor):
        return Control(self.values * factor, self.horizon)

    @classmethod
    def zero(cls, horizon, n_modes, n_knots=1):
        return cls(np.zeros((n_knots, n_modes)), horizon)

    @classmethod
    def constant(cls, field_coeffs, horizon):
        return cls(np.asarray(field_coeffs, dtype=np.float64)[None, :], horizon)


@dataclass
class TrajectoryPair:
    """Sampled slow/fast path with shared-noise provenance and guard state."""

    grid: TimeGrid
    scales: ScaleParams
    X: np.ndarray                 # (n_steps + 1, N)
    Y: np.ndarray
    abs_x_sq: np.ndarray          # |X_i|^2
    norm_x_sq: np.ndarray         # ||X_i||^2
    seed: object
    control: Optional[Control] = None
    guard_radius: Optional[float] = None
    slow_normals: Optional[np.ndarray] = None   # (n_steps, N) when kept
    extra_norm_sq: Optional[np.ndarray] = None  # controlled runs: paired path term

    @property
    def times(self):
        return self.grid.times

    @property
    def n_modes(self):
        return self.X.shape[1]

    def cumulative_norm_sq(self):
        """Left-Riemann running integral of ||X_s||^2."""
        out = np.zeros(self.grid.n_steps + 1)
        np.cumsum(self.norm_x_sq[:-1] * self.grid.dt, out=out[1:])
        return out

    def first_exit_index(self):
        """First grid index where the stopping functional exceeds the radius.

        The functional is |X_t| + int_0^t ||X||^2 ds, plus the paired-path
        integral when one was attached.  Returns None when the guard is unset
        or never crossed.
        """
        if self.guard_radius is None:
            return None
        g = np.sqrt(self.abs_x_sq) + self.cumulative_norm_sq()
        if self.extra_norm_sq is not None:
            g = g + self.extra_norm_sq
        hits = np.nonzero(g > self.guard_radius)[0]
        return int(hits[0]) if hits.size else None

    def truncation_index(self):
        idx = self.first_exit_index()
        return self.grid.n_steps if idx is None else idx


@dataclass
class AuxiliaryPair:
    """Auxiliary (X_hat, Y_hat) paths plus the paired controlled run."""

    grid: TimeGrid
    scales: ScaleParams
    X_hat: np.ndarray
    Y_hat: np.ndarray
    abs_xhat_sq: np.ndarray
    norm_xhat_sq: np.ndarray
    paired: TrajectoryPair


# ---------------------------------------------------------------------------
# stepping tables


@dataclass(frozen=True)
class _Tables:
    lam: np.ndarray
    a_slow: np.ndarray
    w_slow: np.ndarray
    conv_slow: np.ndarray
    cw_slow: np.ndarray
    a_fast: np.ndarray
    w_fast: np.ndarray
    conv_fast: np.ndarray
    cw_fast: np.ndarray


def _make_tables(basis, noise, scales, grid, controlled):
    lam = basis.eigenvalues
    dt = grid.dt
    sq1 = np.sqrt(noise.q1)
    sq2 = np.sqrt(noise.q2)
    a_slow = np.exp(-lam * dt)
    w_slow = -np.expm1(-lam * dt) / lam
    conv_slow = np.sqrt(scales.epsilon) * sq1 * np.sqrt(-np.expm1(-2 * lam * dt) / (2 * lam))
    zf = lam * grid.dt_fast / scales.delta
    a_fast = np.exp(-zf)
    w_fast = -np.expm1(-zf) / lam
    conv_fast = sq2 * np.sqrt(-np.expm1(-2 * zf) / (2 * lam))
    if controlled:
        if scales.epsilon == 0.0:
            raise ValueError("controlled runs require epsilon > 0 "
                             "(the fast control term scales like 1/sqrt(delta*eps))")
        cw_slow = w_slow * sq1
        cw_fast = np.sqrt(scales.delta / scales.epsilon) * w_fast * sq2
    else:
        cw_slow = np.zeros_like(lam)
        cw_fast = np.zeros_like(lam)
    c = np.ascontiguousarray
    return _Tables(c(lam), c(a_slow), c(w_slow), c(conv_slow), c(cw_slow),
                   c(a_fast), c(w_fast), c(conv_fast), c(cw_fast))


def _coeff_args(coeffs):
    return (coeffs.f.kind_code, coeffs.f.ax, coeffs.f.ay,
            coeffs.g.kind_code, coeffs.g.ax, coeffs.g.ay,
            coeffs.sigma1.c0, coeffs.sigma1.cx,
            coeffs.sigma2.c0, coeffs.sigma2.cx, coeffs.sigma2.cy)


def _warn_if_unstable(coeffs):
    gap, margin = stability_margin(coeffs.L_g, coeffs.L_sigma2)
    if gap <= 0 or margin <= 0:
        warnings.warn(
            "fast-scale dissipativity margin is not positive; the fast "
            "equation may not mix", stacklevel=3)


def draw_noise(rng, grid, n_modes, out=None):
    """Standard normals (n_steps, n_substeps, n_modes) for one trajectory."""
    shape = (grid.n_steps, grid.n_substeps, n_modes)
    if out is not None:
        if out.shape != shape:
            raise ValueError("noise buffer shape mismatch")
        return rng.standard_normal(out=out)
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# simulators


def _run(basis, coeffs, noise, scales, grid, x, y, u_grid, controlled, xi):
    n = basis.n_modes
    out_x = np.zeros((grid.n_steps + 1, n))
    out_y = np.zeros((grid.n_steps + 1, n))
    out_x[0] = x
    out_y[0] = y
    absx2 = np.zeros(grid.n_steps + 1)
    normx2 = np.zeros(grid.n_steps + 1)
    tb = _make_tables(basis, noise, scales, grid, controlled)
    bad = _kernels.run_coupled(
        out_x, out_y, absx2, normx2, tb.lam,
        tb.a_slow, tb.w_slow, tb.conv_slow, tb.cw_slow,
        tb.a_fast, tb.w_fast, tb.conv_fast, tb.cw_fast,
        *_coeff_args(coeffs), u_grid, xi,
        basis.eval_matrix, basis.deriv_matrix, 1.0 / (basis.n_quad + 1))
    return out_x, out_y, absx2, normx2, bad


def _finish(pair, bad):
    if bad < 0:
        return pair
    exit_idx = pair.first_exit_index()
    if exit_idx is not None and exit_idx < bad:
        return pair  # guard truncates statistics before the overflow
    raise BlowUpError(
        f"trajectory left the finite range at step {bad} "
        f"(t = {bad * pair.grid.dt:.6g}); last finite index {bad - 1}",
        last_index=bad - 1, time=bad * pair.grid.dt)


def simulate_pair(x, y, coeffs, noise, scales, grid, seed,
                  guard_radius=None, keep_increments=False, basis=None):
    """Sample the coupled system from (x, y) on the given grid.

    Deterministic in (seed, config).  If ``guard_radius`` is set, statistics
    downstream are truncated at the first exit of the stopping functional;
    a blow-up before the horizon without a guard raises ``BlowUpError``.
    """
    return _simulate(x, y, coeffs, noise, scales, grid, seed, None,
                     guard_radius, keep_increments, basis)


def simulate_controlled(x, y, coeffs, noise, scales, grid, control, seed,
                        guard_radius=None, keep_increments=False, basis=None):
    """Controlled system: deterministic control drifts added to both
    equations, with the 1/sqrt(delta*eps) scaling on the fast term."""
    if control is None:
        raise ValueError("control is required; use simulate_pair otherwise")
    return _simulate(x, y, coeffs, noise, scales, grid, seed, control,
                     guard_radius, keep_increments, basis)


def _simulate(x, y, coeffs, noise, scales, grid, seed, control,
              guard_radius, keep_increments, basis):
    if basis is None:
        basis = SpectralBasis(noise.n_modes)
    _warn_if_unstable(coeffs)
    x = basis.field(x)
    y = basis.field(y)
    n = basis.n_modes
    if grid.n_steps == 0:
        z = np.zeros(1)
        return TrajectoryPair(grid, scales, x[None, :].copy(), y[None, :].copy(),
                              z + x @ x, z + (basis.eigenvalues * x) @ x,
                              seed, control, guard_radius)
    rng = rng_for(seed)
    xi = draw_noise(rng, grid, n)
    u_grid = (control.on_grid(grid, n) if control is not None
              else np.zeros((grid.n_steps, n)))
    out_x, out_y, absx2, normx2, bad = _run(
        basis, coeffs, noise, scales, grid, x, y, u_grid,
        control is not None, xi)
    pair = TrajectoryPair(grid, scales, out_x, out_y, absx2, normx2, seed,
                          control=control, guard_radius=guard_radius)
    if keep_increments:
        pair.slow_normals = xi.sum(axis=1) / np.sqrt(grid.n_substeps)
    return _finish(pair, bad)


def simulate_auxiliary(x, y, coeffs, noise, scales, grid, control, seed,
                       guard_radius=None, basis=None, paired=None):
    """Khasminskii auxiliary processes driven by a paired controlled run.

    The fast auxiliary uses the controlled slow path frozen at block starts
    and the same W draws but no control term; the slow auxiliary is the
    noise-free equation with drift f evaluated at the frozen path and its own
    control term.  ``paired`` may pass a precomputed controlled run for the
    same (seed, config); otherwise it is simulated here.
    """
    if basis is None:
        basis = SpectralBasis(noise.n_modes)
    x = basis.field(x)
    y = basis.field(y)
    if paired is None:
        if control is None:
            paired = simulate_pair(x, y, coeffs, noise, scales, grid, seed,
                                   guard_radius=guard_radius, basis=basis)
        else:
            paired = simulate_controlled(x, y, coeffs, noise, scales, grid,
                                         control, seed,
                                         guard_radius=guard_radius,
                                         basis=basis)
    n = basis.n_modes
    rng = rng_for(seed)
    xi = draw_noise(rng, grid, n)
    u_grid = control.on_grid(grid, n) if control is not None \
        else np.zeros((grid.n_steps, n))
    out_x = np.zeros((grid.n_steps + 1, n))
    out_y = np.zeros((grid.n_steps + 1, n))
    out_x[0] = x
    out_y[0] = y
    absx2 = np.zeros(grid.n_steps + 1)
    normx2 = np.zeros(grid.n_steps + 1)
    tb = _make_tables(basis, noise, scales, grid, control is not None)
    bad = _kernels.run_auxiliary(
        out_x, out_y, absx2, normx2, tb.lam,
        tb.a_slow, tb.w_slow, tb.cw_slow,
        tb.a_fast, tb.w_fast, tb.conv_fast,
        *_coeff_args(coeffs), u_grid, xi,
        np.ascontiguousarray(paired.X), grid.block_steps,
        basis.eval_matrix, basis.deriv_matrix, 1.0 / (basis.n_quad + 1))
    if bad >= 0:
        raise BlowUpError(
            f"auxiliary path left the finite range at step {bad}",
            last_index=bad - 1, time=bad * grid.dt)
    # attach the auxiliary energy so the paired guard matches the stopping
    # functional used for controlled runs
    aux = AuxiliaryPair(grid, scales, out_x, out_y, absx2, normx2, paired)
    cum = np.zeros(grid.n_steps + 1)
    np.cumsum(normx2[:-1] * grid.dt, out=cum[1:])
    paired.extra_norm_sq = cum
    return aux


def step_coupled(x, y, coeffs, noise, scales, grid, substep_normals,
                 control_value=None, basis=None):
    """One slow step (with its fast substeps) from explicit noise draws.

    ``substep_normals`` has shape (n_substeps, n_modes); the slow increment
    is their normalized sum, enforcing the shared-W contract.  Mostly a test
    surface; the simulators batch the same update.
    """
    if basis is None:
        basis = SpectralBasis(noise.n_modes)
    _warn_if_unstable(coeffs)
    x = basis.field(x)
    y = basis.field(y)
    xi = np.asarray(substep_normals, dtype=np.float64)
    if xi.shape != (grid.n_substeps, basis.n_modes):
        raise ValueError("substep normals must have shape (n_substeps, n_modes)")
    one = TimeGrid(grid.dt, 1, n_substeps=grid.n_substeps)
    controlled = control_value is not None
    u_grid = (np.asarray(control_value, dtype=np.float64)[None, :]
              if controlled else np.zeros((1, basis.n_modes)))
    out_x, out_y, absx2, _, bad = _run(
        basis, coeffs, noise, scales, one, x, y, u_grid, controlled,
        np.ascontiguousarray(xi[None]))
    if bad >= 0:
        raise BlowUpError("state left the finite range within one step",
                          last_index=0, time=grid.dt)
    return out_x[1], out_y[1]

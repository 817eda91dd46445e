"""Deterministic skeleton solver and its energy/continuity probes.

The skeleton equation replaces the fast coupling by the averaged drift and
the noise by a control acting through the slow diffusion operator; with the
control off it is the averaged equation.  The solver is the deterministic
restriction of the stochastic scheme (exact linear part, variation-of-
constants drift weights), so controlled linear problems integrate exactly
for piecewise-constant controls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import SpectralBasis
from .frozen import AveragedDrift
from .integrator import BlowUpError, Control, TimeGrid

__all__ = ["SkeletonPath", "solve_skeleton", "energy_report",
           "weak_continuity_probe", "oscillating_controls", "EnergyReport"]


@dataclass
class SkeletonPath:
    """Deterministic slow path with its running energy ledger."""

    grid: TimeGrid
    X: np.ndarray              # (n_steps + 1, N)
    abs_sq: np.ndarray         # |X_i|^2
    norm_sq: np.ndarray        # ||X_i||^2
    fbar_stderr_max: float = 0.0

    @property
    def times(self):
        return self.grid.times

    def endpoint(self):
        return self.X[-1]

    def sup_abs_sq(self):
        return float(self.abs_sq.max())

    def int_norm_sq(self):
        """Left-Riemann integral of ||X_s||^2 over [0, T]."""
        return float(np.sum(self.norm_sq[:-1]) * self.grid.dt)


def solve_skeleton(x, control, coeffs, noise, fbar, grid, basis=None):
    """Integrate the averaged/controlled deterministic equation.

    ``fbar`` is an AveragedDrift (closed form or cached time averages); its
    largest reported standard error along the path is recorded on the result.
    ``control=None`` solves the averaged equation.
    """
    if basis is None:
        basis = SpectralBasis(noise.n_modes)
    if not isinstance(fbar, AveragedDrift):
        raise TypeError("fbar must be an AveragedDrift")
    x = basis.field(x)
    lam = basis.eigenvalues
    dt = grid.dt
    n = basis.n_modes
    a = np.exp(-lam * dt)
    w = -np.expm1(-lam * dt) / lam
    cw = w * np.sqrt(noise.q1)
    u_grid = (control.on_grid(grid, n) if control is not None
              else np.zeros((grid.n_steps, n)))

    out = np.zeros((grid.n_steps + 1, n))
    out[0] = x
    abs_sq = np.zeros(grid.n_steps + 1)
    norm_sq = np.zeros(grid.n_steps + 1)
    abs_sq[0] = x @ x
    norm_sq[0] = (lam * x) @ x
    se_max = 0.0
    for i in range(grid.n_steps):
        fb, se = fbar.evaluate(x)
        se_max = max(se_max, float(np.max(se)) if se.size else 0.0)
        s1v = coeffs.sigma1(x)
        bx = basis.burgers_nonlinearity(x)
        x = a * x + w * (bx + fb) + s1v * (cw * u_grid[i])
        out[i + 1] = x
        abs_sq[i + 1] = x @ x
        norm_sq[i + 1] = (lam * x) @ x
        if not np.isfinite(abs_sq[i + 1]):
            raise BlowUpError(
                f"skeleton solver diverged at step {i + 1} "
                f"(t = {(i + 1) * dt:.6g}); |X| last finite at step {i}",
                last_index=i, time=(i + 1) * dt)
    return SkeletonPath(grid, out, abs_sq, norm_sq, fbar_stderr_max=se_max)


@dataclass
class EnergyReport:
    sup_abs_sq: float
    int_norm_sq: float
    bound_witness: float      # (sup + integral) / (1 + |x_0|^2)


def energy_report(path):
    """Energy functionals of a solved path and their initial-data witness."""
    x0_sq = float(path.abs_sq[0])
    total = path.sup_abs_sq() + path.int_norm_sq()
    return EnergyReport(
        sup_abs_sq=path.sup_abs_sq(),
        int_norm_sq=path.int_norm_sq(),
        bound_witness=total / (1.0 + x0_sq),
    )


def oscillating_controls(base, indices, amplitude, mode, grid):
    """Controls ``u_n = u + a * cos(n * 2*pi*t/T) * e_mode``.

    These converge weakly (not strongly) to ``u`` as n grows; the knot grid
    matches the solver grid so the oscillations are resolved exactly.
    """
    t_mid = (np.arange(grid.n_steps) + 0.5) * grid.dt
    omega = 2.0 * np.pi / grid.horizon
    out = []
    for n in indices:
        u = base.on_grid(grid, max(base.n_modes, mode))
        if u.shape[1] < mode:
            raise ValueError("oscillation mode outside control width")
        u = u.copy()
        u[:, mode - 1] += amplitude * np.cos(n * omega * t_mid)
        out.append(Control(u, grid.horizon))
    return out


def weak_continuity_probe(x, controls, control_limit, coeffs, noise, fbar,
                          grid, basis=None):
    """Gaps between skeleton solutions along a weakly converging sequence.

    Returns a list of ``(sup_t |X_n - X|, int ||X_n - X||^2 dt)`` pairs, one
    per control in the sequence; for oscillatory perturbations these decay
    toward zero as the index grows.
    """
    if basis is None:
        basis = SpectralBasis(noise.n_modes)
    lam = basis.eigenvalues
    ref = solve_skeleton(x, control_limit, coeffs, noise, fbar, grid, basis)
    gaps = []
    for u in controls:
        path = solve_skeleton(x, u, coeffs, noise, fbar, grid, basis)
        diff = path.X - ref.X
        sup_gap = float(np.sqrt((diff * diff).sum(axis=1)).max())
        int_v = float(np.sum((diff[:-1] ** 2 * lam).sum(axis=1)) * grid.dt)
        gaps.append((sup_gap, int_v))
    return gaps

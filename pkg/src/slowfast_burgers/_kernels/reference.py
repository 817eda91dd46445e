"""Pure-numpy stepping kernels (fallback backend).

Mirrors the native kernels operation for operation: the exponential factors,
drift weights and noise standard deviations arrive as precomputed per-mode
tables, shared W draws arrive as standard-normal arrays, and all state
updates use the same arithmetic order as the compiled code.  The two
backends agree to the last few ulps.

Conventions shared with the native module:

* slow update over one step of size dt, frozen at the step start:
  ``x' = a_slow*x + w_slow*(B(x) + f(x, y)) + s1 * (cw_slow*u + conv_slow*zeta)``
* fast update over each of n_sub substeps with the slow field frozen:
  ``y' = a_fast*y + w_fast*g(x, y) + s2 * (cw_fast*u + conv_fast*xi)``
* ``zeta = sum_j xi_j / sqrt(n_sub)`` is the slow-step normal, so one
  cylindrical W drives both equations.

Control and noise channels are disabled by passing zero tables.  Return
value is -1 for a clean run, else the index of the first non-finite step.
"""

import numpy as np

BACKEND_NAME = "python"


def _pair(kind, ax, ay, x, y):
    if kind == 0:
        return np.zeros_like(x)
    if kind == 1:
        return ax * x + ay * y
    return ax * np.tanh(x) + ay * np.tanh(y)


def _burgers(emat, dmat, x, proj_scale):
    values = (emat @ x) * (dmat @ x)
    return (emat.T @ values) * proj_scale


def _energies(lam, x):
    return float(x @ x), float((lam * x) @ x)


def run_coupled(out_x, out_y, out_absx2, out_normx2,
                lam, a_slow, w_slow, conv_slow, cw_slow,
                a_fast, w_fast, conv_fast, cw_fast,
                f_kind, f_ax, f_ay, g_kind, g_ax, g_ay,
                s1_c0, s1_cx, s2_c0, s2_cx, s2_cy,
                u, xi, emat, dmat, proj_scale):
    n_steps, n_sub, _ = xi.shape
    inv_sqrt_nsub = 1.0 / np.sqrt(n_sub)
    x = out_x[0].copy()
    y = out_y[0].copy()
    out_absx2[0], out_normx2[0] = _energies(lam, x)
    for i in range(n_steps):
        absx = np.sqrt(out_absx2[i])
        s1v = s1_c0 + s1_cx * np.tanh(absx)
        tx = s2_cx * np.tanh(absx)
        bx = _burgers(emat, dmat, x, proj_scale)
        fv = _pair(f_kind, f_ax, f_ay, x, y)
        zeta = xi[i].sum(axis=0) * inv_sqrt_nsub
        x_new = a_slow * x + w_slow * (bx + fv) \
            + s1v * (cw_slow * u[i] + conv_slow * zeta)
        for j in range(n_sub):
            s2v = s2_c0 + tx + s2_cy * np.tanh(np.sqrt(y @ y))
            gv = _pair(g_kind, g_ax, g_ay, x, y)
            y = a_fast * y + w_fast * gv \
                + s2v * (cw_fast * u[i] + conv_fast * xi[i, j])
        x = x_new
        out_x[i + 1] = x
        out_y[i + 1] = y
        out_absx2[i + 1], out_normx2[i + 1] = _energies(lam, x)
        if not (np.isfinite(out_absx2[i + 1]) and np.isfinite(y @ y)):
            return i + 1
    return -1


def run_auxiliary(out_x, out_y, out_absx2, out_normx2,
                  lam, a_slow, w_slow, cw_slow,
                  a_fast, w_fast, conv_fast,
                  f_kind, f_ax, f_ay, g_kind, g_ax, g_ay,
                  s1_c0, s1_cx, s2_c0, s2_cx, s2_cy,
                  u, xi, x_ctrl, block_steps, emat, dmat, proj_scale):
    """Khasminskii auxiliary pair driven by a paired controlled run.

    f and g take the controlled slow path frozen at block starts; the fast
    equation reuses the paired run's W draws and carries no control term;
    the slow equation is noise-free.
    """
    n_steps, n_sub, _ = xi.shape
    x = out_x[0].copy()
    y = out_y[0].copy()
    out_absx2[0], out_normx2[0] = _energies(lam, x)
    for i in range(n_steps):
        x_blk = x_ctrl[(i // block_steps) * block_steps]
        absx = np.sqrt(out_absx2[i])
        s1v = s1_c0 + s1_cx * np.tanh(absx)
        tx = s2_cx * np.tanh(np.sqrt(x_blk @ x_blk))
        bx = _burgers(emat, dmat, x, proj_scale)
        fv = _pair(f_kind, f_ax, f_ay, x_blk, y)
        x_new = a_slow * x + w_slow * (bx + fv) + s1v * (cw_slow * u[i])
        for j in range(n_sub):
            s2v = s2_c0 + tx + s2_cy * np.tanh(np.sqrt(y @ y))
            gv = _pair(g_kind, g_ax, g_ay, x_blk, y)
            y = a_fast * y + w_fast * gv + s2v * (conv_fast * xi[i, j])
        x = x_new
        out_x[i + 1] = x
        out_y[i + 1] = y
        out_absx2[i + 1], out_normx2[i + 1] = _energies(lam, x)
        if not (np.isfinite(out_absx2[i + 1]) and np.isfinite(y @ y)):
            return i + 1
    return -1


def run_frozen(out_y, a, w, conv, g_kind, g_ax, g_ay,
               s2_base, s2_cy, x_frozen, xi):
    """Fast equation with the slow argument held fixed (unit time scale)."""
    n_steps = xi.shape[0]
    y = out_y[0].copy()
    for i in range(n_steps):
        s2v = s2_base + s2_cy * np.tanh(np.sqrt(y @ y))
        gv = _pair(g_kind, g_ax, g_ay, x_frozen, y)
        y = a * y + w * gv + s2v * (conv * xi[i])
        out_y[i + 1] = y
        if not np.isfinite(y @ y):
            return i + 1
    return -1

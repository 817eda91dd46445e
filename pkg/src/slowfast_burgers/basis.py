"""Sine eigenbasis of the Dirichlet Laplacian on [0, 1].

Fields are represented by their first ``n_modes`` coefficients against the
orthonormal eigenfunctions ``e_k(xi) = sqrt(2) sin(k pi xi)``, which satisfy
``-d^2/dxi^2 e_k = lam_k e_k`` with ``lam_k = k^2 pi^2``.  The quadratic
advection term is evaluated pseudospectrally on a uniform interior grid sized
for exact dealiasing: with ``n_quad >= 2 n_modes`` interior points the
discrete sine transform integrates sine polynomials of degree up to
``2 n_modes`` exactly, so the Galerkin projection of ``x d_xi y`` carries no
aliasing error, only round-off.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SpectralBasis", "InvalidFieldError"]


class InvalidFieldError(ValueError):
    """Raised when a coefficient vector is malformed or non-finite."""


class SpectralBasis:
    """Galerkin truncation of the sine basis with dealiased products.

    Parameters
    ----------
    n_modes : int
        Number of retained modes N (positive).
    n_quad : int, optional
        Interior quadrature points M for physical-space products.
        Defaults to ``2 * n_modes + 1``; must satisfy ``M >= 2 N``.
    """

    def __init__(self, n_modes, n_quad=None):
        n_modes = int(n_modes)
        if n_modes < 1:
            raise ValueError(f"n_modes must be positive, got {n_modes}")
        if n_quad is None:
            n_quad = 2 * n_modes + 1
        n_quad = int(n_quad)
        if n_quad < 2 * n_modes:
            raise ValueError(
                f"n_quad={n_quad} gives aliased products; need >= {2 * n_modes}")
        self.n_modes = n_modes
        self.n_quad = n_quad
        k = np.arange(1, n_modes + 1, dtype=np.float64)
        self.eigenvalues = (k * np.pi) ** 2

        # Interior grid xi_j = j / (M + 1), j = 1..M.  Rows are grid points,
        # columns are modes; eval_matrix @ coeffs is the physical field and
        # (eval_matrix.T @ values) / (M + 1) is the exact mode projection for
        # sine polynomials of degree <= M.
        j = np.arange(1, n_quad + 1, dtype=np.float64)
        self.grid = j / (n_quad + 1)
        theta = np.outer(self.grid, k * np.pi)
        self.eval_matrix = np.ascontiguousarray(np.sqrt(2.0) * np.sin(theta))
        self.deriv_matrix = np.ascontiguousarray(
            np.sqrt(2.0) * (k * np.pi) * np.cos(theta))

    # -- field constructors -------------------------------------------------

    def field(self, coeffs):
        """Validate and copy a coefficient vector."""
        x = np.asarray(coeffs, dtype=np.float64)
        if x.shape != (self.n_modes,):
            raise InvalidFieldError(
                f"expected {self.n_modes} coefficients, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidFieldError("non-finite coefficients")
        return x.copy()

    def zero(self):
        return np.zeros(self.n_modes)

    def unit_mode(self, k):
        """The eigenfunction e_k as a coefficient vector (1-based k)."""
        if not 1 <= k <= self.n_modes:
            raise ValueError(f"mode {k} outside 1..{self.n_modes}")
        x = self.zero()
        x[k - 1] = 1.0
        return x

    def random_field(self, rng, decay=1.0, scale=1.0, max_l2=None):
        """Gaussian field with mode-k std ``scale * k**-decay``.

        If ``max_l2`` is given the sample is rescaled onto the ball
        ``|x| <= max_l2`` when it falls outside.
        """
        k = np.arange(1, self.n_modes + 1, dtype=np.float64)
        x = rng.standard_normal(self.n_modes) * scale * k ** (-decay)
        if max_l2 is not None:
            r = np.sqrt(np.sum(x * x))
            if r > max_l2:
                x *= max_l2 / r
        return x

    def to_physical(self, x):
        """Evaluate the field on the interior quadrature grid."""
        return self.eval_matrix @ np.asarray(x, dtype=np.float64)

    # -- norms and linear operators -----------------------------------------

    def sobolev_norm(self, x, sigma):
        """Fractional Sobolev norm ``(sum lam_k^sigma x_k^2)^(1/2)``.

        sigma = 0 is the L2 norm, sigma = 1 the H^1_0 norm, sigma = -1 the
        dual norm.  Supported range sigma in [-2, 2].
        """
        if not -2.0 <= sigma <= 2.0:
            raise ValueError(f"sigma={sigma} outside supported range [-2, 2]")
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise InvalidFieldError("non-finite coefficients")
        if sigma == 0.0:
            return float(np.sqrt(np.sum(x * x)))
        return float(np.sqrt(np.sum(self.eigenvalues ** sigma * x * x)))

    def l2_norm(self, x):
        return self.sobolev_norm(x, 0.0)

    def apply_laplacian(self, x):
        """Dirichlet Laplacian: mode-wise multiplication by -lam_k."""
        return -self.eigenvalues * np.asarray(x, dtype=np.float64)

    def apply_semigroup(self, x, t):
        """Heat semigroup at time t >= 0, exact in the truncated basis."""
        if t < 0:
            raise ValueError(f"semigroup time must be nonnegative, got {t}")
        return np.exp(-self.eigenvalues * t) * np.asarray(x, dtype=np.float64)

    # -- advection nonlinearity ----------------------------------------------

    def advect(self, x, y):
        """Galerkin projection of ``x d_xi y`` onto the first N modes.

        Computed pseudospectrally: evaluate x and d_xi y on the interior
        grid, multiply pointwise, project by the discrete sine transform.
        Exact (up to round-off) for truncated inputs since the product is a
        sine polynomial of degree <= 2N <= M.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        values = (self.eval_matrix @ x) * (self.deriv_matrix @ y)
        return (self.eval_matrix.T @ values) / (self.n_quad + 1)

    def burgers_nonlinearity(self, x):
        """The quadratic term ``B(x) = x d_xi x`` projected onto N modes."""
        return self.advect(x, x)

    def trilinear_form(self, x, y, z):
        """The advection form ``b(x, y, z) = int x (d_xi y) z dxi``.

        Exact for truncated fields: the projection of ``x d_xi y`` is exact
        and z holds no modes beyond N, so Parseval closes the integral.
        """
        z = np.asarray(z, dtype=np.float64)
        return float(self.advect(x, y) @ z)

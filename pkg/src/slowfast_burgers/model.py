"""Coefficient bundles, noise spectra, scale parameters, and the structural
condition checker.

Coefficients are restricted to a small structured family so the compiled
stepping kernels can evaluate them without calling back into Python:

* pair maps f, g: mode-wise ``zero``, ``linear`` (ax*x + ay*y) or ``tanh``
  (ax*tanh(x) + ay*tanh(y)),
* diffusion multipliers: scalars ``c0 + cx*tanh(|x|) + cy*tanh(|y|)``
  composed with the mode-diagonal covariance square root Q^(1/2).

Every preset declares its Lipschitz/growth constants; ``check_conditions``
verifies them empirically and evaluates the stability inequality on the
smallest eigenvalue exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .basis import SpectralBasis

__all__ = [
    "PairMap", "Multiplier", "NoiseSpec", "CoefficientSet", "ScaleParams",
    "ConditionReport", "preset", "check_conditions", "hilbert_schmidt_norm",
    "PRESET_NAMES", "LAMBDA_1",
]

LAMBDA_1 = np.pi ** 2

PAIR_KINDS = ("zero", "linear", "tanh")
MULT_KINDS = ("constant", "tanh_norm")


@dataclass(frozen=True)
class PairMap:
    """Mode-wise map H x H -> H from the kernel-supported family."""

    kind: str
    ax: float = 0.0
    ay: float = 0.0

    def __post_init__(self):
        if self.kind not in PAIR_KINDS:
            raise ValueError(f"unknown pair map kind {self.kind!r}")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "zero":
            return np.zeros(np.broadcast_shapes(x.shape, y.shape))
        if self.kind == "linear":
            return self.ax * x + self.ay * y
        return self.ax * np.tanh(x) + self.ay * np.tanh(y)

    @property
    def kind_code(self):
        return PAIR_KINDS.index(self.kind)


@dataclass(frozen=True)
class Multiplier:
    """Scalar diffusion multiplier ``c0 + cx*tanh(|x|) + cy*tanh(|y|)``.

    The operator acting on a field v is ``s(x, y) * (sqrt(q_k) v_k)_k``.
    """

    c0: float
    cx: float = 0.0
    cy: float = 0.0

    def __call__(self, x, y=None):
        s = self.c0
        if self.cx:
            s += self.cx * np.tanh(float(np.linalg.norm(x)))
        if self.cy:
            if y is None:
                raise ValueError("multiplier depends on y but none was given")
            s += self.cy * np.tanh(float(np.linalg.norm(y)))
        return float(s)


def hilbert_schmidt_norm(multiplier_value, q):
    """HS norm of a mode-diagonal operator ``s * diag(sqrt(q_k))``."""
    return abs(float(multiplier_value)) * float(np.sqrt(np.sum(q)))


@dataclass(frozen=True)
class NoiseSpec:
    """Mode-diagonal trace-class covariances for the two noise channels."""

    q1: np.ndarray
    q2: np.ndarray

    def __post_init__(self):
        for name in ("q1", "q2"):
            q = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(q < 0) or not np.all(np.isfinite(q)):
                raise ValueError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, q)
        if self.q1.shape != self.q2.shape:
            raise ValueError("q1 and q2 must have matching length")

    @property
    def n_modes(self):
        return self.q1.shape[0]

    @classmethod
    def power_decay(cls, n_modes, exponent=2.0, scale1=1.0, scale2=1.0):
        """``q_k = scale * k**-exponent`` with a certified finite trace.

        For exponent p > 1 the full trace is bounded by ``scale * p/(p-1)``
        (integral comparison); the truncated sum is checked against it.
        """
        if exponent <= 1.0:
            raise ValueError("trace class needs decay exponent > 1")
        k = np.arange(1, n_modes + 1, dtype=np.float64)
        q1 = scale1 * k ** (-exponent)
        q2 = scale2 * k ** (-exponent)
        bound = exponent / (exponent - 1.0)
        assert q1.sum() <= scale1 * bound + 1e-12
        assert q2.sum() <= scale2 * bound + 1e-12
        return cls(q1=q1, q2=q2)

    @classmethod
    def flat(cls, n_modes, scale1=1.0, scale2=1.0):
        """Flat spectrum up to the truncation (trace = N * scale exactly).

        The roughest admissible choice at a given truncation; the coarse
        time-regularity of the slow path (the square-root block-freezing
        law) is only visible in this regime, while decaying spectra give
        smoother paths and faster decay.
        """
        ones = np.ones(n_modes)
        return cls(q1=scale1 * ones, q2=scale2 * ones)

    def trace(self, which):
        return float(getattr(self, which).sum())


@dataclass(frozen=True)
class CoefficientSet:
    """The coefficient bundle with its declared constants.

    ``c_g`` and ``c_sigma2`` are the x-argument constants of g and sigma2,
    tracked separately from the y-Lipschitz constants L_g, L_sigma2 entering
    the stability condition.  ``growth_c`` bounds the sigma2 channel's HS norm
    by ``growth_c * (|x| + 1)``.
    """

    f: PairMap
    g: PairMap
    sigma1: Multiplier
    sigma2: Multiplier
    L_f: float
    L_g: float
    c_g: float
    L_sigma1: float
    L_sigma2: float
    c_sigma2: float
    growth_c: float
    fbar_form: Optional[str] = None   # None | "zero" | "inverse_laplacian"
    fbar_scale: float = 1.0
    name: str = "custom"

    def fbar_closed_form(self, x, eigenvalues):
        """Closed-form averaged drift, if this model declares one."""
        if self.fbar_form is None:
            return None
        if self.fbar_form == "zero":
            return np.zeros_like(np.asarray(x, dtype=np.float64))
        if self.fbar_form == "inverse_laplacian":
            return self.fbar_scale * np.asarray(x, dtype=np.float64) / eigenvalues
        raise ValueError(f"unknown fbar form {self.fbar_form!r}")

    @property
    def has_closed_form_fbar(self):
        return self.fbar_form is not None


@dataclass(frozen=True)
class ScaleParams:
    """Time-scale separation parameters.

    delta defaults to ``epsilon ** delta_exponent`` with exponent p > 1 so
    that delta/epsilon -> 0; an explicit delta permits the epsilon = 0
    deterministic reductions used in scheme tests.
    """

    epsilon: float
    delta_exponent: float = 2.0
    delta_override: Optional[float] = None
    khasminskii_exponent: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon={self.epsilon} outside [0, 1]")
        if self.delta_override is None:
            if self.epsilon == 0.0:
                raise ValueError("epsilon = 0 requires an explicit delta")
            if self.delta_exponent <= 1.0:
                raise ValueError("delta exponent must exceed 1")
        elif not 0.0 < self.delta_override <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if self.khasminskii_exponent != 0.5:
            raise ValueError("block size is pinned to delta**(1/2)")

    @property
    def delta(self):
        if self.delta_override is not None:
            return float(self.delta_override)
        return float(self.epsilon ** self.delta_exponent)

    @property
    def khasminskii_delta(self):
        return float(self.delta ** self.khasminskii_exponent)


# ---------------------------------------------------------------------------
# presets

PRESET_NAMES = ("linear_ou", "lipschitz_saturating", "decoupled_small_noise")


def preset(name, n_modes=32, kappa=1.0, noise=None):
    """Named benchmark models returning ``(CoefficientSet, NoiseSpec)``.

    linear_ou
        f(x, y) = y, g(x, y) = kappa*x, constant unit multipliers.  The
        frozen equation is an OU process with invariant mean kappa*x_k/lam_k,
        so the averaged drift is kappa*(-Laplacian)^{-1} x exactly.
    lipschitz_saturating
        tanh-built f and g with declared bounded-derivative constants; no
        closed-form averaged drift.
    decoupled_small_noise
        f = g = 0 with unit multipliers; the slow equation decouples and at
        one mode is exactly linear, which feeds the quadratic-control oracle.

    ``noise`` replaces the default ``q_k = k**-2`` spectrum; the declared
    growth constants are derived from whichever spectrum is used.
    """
    if noise is None:
        noise = NoiseSpec.power_decay(n_modes)
    elif noise.n_modes != n_modes:
        raise ValueError("noise spectrum length must match n_modes")
    trace1 = np.sqrt(noise.trace("q1"))
    trace2 = np.sqrt(noise.trace("q2"))
    if name == "linear_ou":
        coeffs = CoefficientSet(
            f=PairMap("linear", ax=0.0, ay=1.0),
            g=PairMap("linear", ax=kappa, ay=0.0),
            sigma1=Multiplier(1.0),
            sigma2=Multiplier(1.0),
            L_f=1.0, L_g=0.0, c_g=abs(kappa),
            L_sigma1=0.0, L_sigma2=0.0, c_sigma2=0.0,
            growth_c=trace2,
            fbar_form="inverse_laplacian", fbar_scale=kappa,
            name=name,
        )
    elif name == "lipschitz_saturating":
        coeffs = CoefficientSet(
            f=PairMap("tanh", ax=0.5, ay=0.5),
            g=PairMap("tanh", ax=1.0, ay=2.0),
            sigma1=Multiplier(1.0, cx=0.25),
            sigma2=Multiplier(1.0, cy=0.5),
            L_f=0.5, L_g=2.0, c_g=1.0,
            L_sigma1=0.25 * trace1, L_sigma2=0.5 * trace2, c_sigma2=0.0,
            growth_c=1.5 * trace2,
            fbar_form=None,
            name=name,
        )
    elif name == "decoupled_small_noise":
        coeffs = CoefficientSet(
            f=PairMap("zero"),
            g=PairMap("zero"),
            sigma1=Multiplier(1.0),
            sigma2=Multiplier(1.0),
            L_f=0.0, L_g=0.0, c_g=0.0,
            L_sigma1=0.0, L_sigma2=0.0, c_sigma2=0.0,
            growth_c=trace2,
            fbar_form="zero",
            name=name,
        )
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    return coeffs, noise


# ---------------------------------------------------------------------------
# condition checker


@dataclass
class ConditionReport:
    """Outcome of the structural checks.

    Declared-constant violations are reported, not raised, so failing
    regimes can still be probed deliberately.
    """

    a1_witness: dict
    a2_witness: float
    a3_holds: bool
    margins: dict
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return self.a3_holds and not self.violations


def stability_margin(L_g, L_sigma2):
    """The two quantities whose positivity is the fast-scale dissipativity.

    Returns ``(lam1 - L_g, 1 - (L_sigma2^2/lam1 + L_g/(lam1 - L_g)))``;
    the second is meaningful only when the first is positive.
    """
    gap = LAMBDA_1 - L_g
    if gap <= 0.0:
        return gap, -np.inf
    return gap, 1.0 - (L_sigma2 ** 2 / LAMBDA_1 + L_g / gap)


def check_conditions(coeffs, noise, basis=None, n_samples=1000, seed=0,
                     tolerance=0.01):
    """Exact dissipativity check plus sampled Lipschitz/growth witnesses.

    The dissipativity booleans use lam_1 = pi^2 exactly.  Lipschitz ratios
    are sampled over ``n_samples`` random field pairs; a witness exceeding
    its declared constant by more than ``tolerance`` (relative) is recorded
    as a violation.
    """
    if basis is None:
        basis = SpectralBasis(noise.n_modes)
    rng = np.random.default_rng(seed)
    gap, margin = stability_margin(coeffs.L_g, coeffs.L_sigma2)
    a3 = gap > 0.0 and margin > 0.0

    sqrt_tr1 = np.sqrt(noise.trace("q1"))
    sqrt_tr2 = np.sqrt(noise.trace("q2"))
    ratios = {"f": 0.0, "g_y": 0.0, "g_x": 0.0, "sigma1": 0.0,
              "sigma2_y": 0.0, "sigma2_x": 0.0}
    a2_witness = 0.0
    for _ in range(n_samples):
        x1 = basis.random_field(rng, decay=1.0, scale=2.0)
        x2 = basis.random_field(rng, decay=1.0, scale=2.0)
        y1 = basis.random_field(rng, decay=1.0, scale=2.0)
        y2 = basis.random_field(rng, decay=1.0, scale=2.0)
        dx = np.linalg.norm(x1 - x2)
        dy = np.linalg.norm(y1 - y2)
        if dx + dy > 0:
            df = np.linalg.norm(coeffs.f(x1, y1) - coeffs.f(x2, y2))
            ratios["f"] = max(ratios["f"], df / (dx + dy))
        if dy > 0:
            dg = np.linalg.norm(coeffs.g(x1, y1) - coeffs.g(x1, y2))
            ratios["g_y"] = max(ratios["g_y"], dg / dy)
            ds2 = abs(coeffs.sigma2(x1, y1) - coeffs.sigma2(x1, y2)) * sqrt_tr2
            ratios["sigma2_y"] = max(ratios["sigma2_y"], ds2 / dy)
        if dx > 0:
            dg = np.linalg.norm(coeffs.g(x1, y1) - coeffs.g(x2, y1))
            ratios["g_x"] = max(ratios["g_x"], dg / dx)
            ds1 = abs(coeffs.sigma1(x1) - coeffs.sigma1(x2)) * sqrt_tr1
            ratios["sigma1"] = max(ratios["sigma1"], ds1 / dx)
            ds2 = abs(coeffs.sigma2(x1, y1) - coeffs.sigma2(x2, y1)) * sqrt_tr2
            ratios["sigma2_x"] = max(ratios["sigma2_x"], ds2 / dx)
        hs = hilbert_schmidt_norm(coeffs.sigma2(x1, y1), noise.q2)
        a2_witness = max(a2_witness, hs / (np.linalg.norm(x1) + 1.0))

    declared = {"f": coeffs.L_f, "g_y": coeffs.L_g, "g_x": coeffs.c_g,
                "sigma1": coeffs.L_sigma1, "sigma2_y": coeffs.L_sigma2,
                "sigma2_x": coeffs.c_sigma2}
    violations = []
    for key, witness in ratios.items():
        bound = declared[key]
        if witness > bound * (1.0 + tolerance) + 1e-12:
            violations.append(
                f"{key}: sampled ratio {witness:.6g} exceeds declared {bound:.6g}")
    if a2_witness > coeffs.growth_c * (1.0 + tolerance) + 1e-12:
        violations.append(
            f"growth: sampled {a2_witness:.6g} exceeds declared {coeffs.growth_c:.6g}")

    return ConditionReport(
        a1_witness=ratios,
        a2_witness=a2_witness,
        a3_holds=bool(a3),
        margins={"eigenvalue_gap": float(gap), "stability_margin": float(margin)},
        violations=violations,
    )


def with_constants(coeffs, **updates):
    """Copy a coefficient set with some declared constants replaced."""
    return replace(coeffs, **updates)
